#include "kqg/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

constexpr std::array<char, 8> kMagic = {'K', 'Q', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kFloat64 = 1;

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw ParseError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

}  // namespace

Checkpoint snapshot(const ParameterSet& params) {
  Checkpoint out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.group, p.value});
  return out;
}

void restore(ParameterSet& params, const Checkpoint& ckpt) {
  if (ckpt.size() != params.size())
    throw ShapeError("restore: checkpoint has " + std::to_string(ckpt.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  std::size_t i = 0;
  for (auto& p : params) {
    const auto& t = ckpt[i++];
    if (t.name != p.name || t.value.rows() != p.value.rows() || t.value.cols() != p.value.cols())
      throw ShapeError("restore: tensor '" + t.name + "' " + nn::shape_str(t.value) + " does not match '" + p.name +
                       "' " + nn::shape_str(p.value));
    p.value = t.value;
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& t : ckpt) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, t.group == nn::Group::QgCore ? 0 : 1);
    put<std::uint8_t>(out, kFloat64);
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put<double>(out, t.value(r, c));
  }
  if (!out) throw ParseError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ParseError("not a checkpoint file: bad magic");
  const auto count = get<std::uint32_t>(in);
  Checkpoint out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get<std::uint32_t>(in));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) throw ParseError("checkpoint truncated");
    const auto group = get<std::uint8_t>(in);
    if (group > 1) throw ParseError("checkpoint: bad group tag for '" + t.name + "'");
    t.group = group == 0 ? nn::Group::QgCore : nn::Group::Knowledge;
    if (get<std::uint8_t>(in) != kFloat64) throw ParseError("checkpoint: unsupported dtype for '" + t.name + "'");
    if (get<std::uint32_t>(in) != 2) throw ParseError("checkpoint: expected 2 dimensions for '" + t.name + "'");
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    t.value.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) t.value(r, c) = get<double>(in);
    out.push_back(std::move(t));
  }
  return out;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw ValidationError("average_checkpoints: no checkpoints");
  Checkpoint mean = checkpoints.front();
  for (std::size_t k = 1; k < checkpoints.size(); ++k) {
    const auto& ck = checkpoints[k];
    if (ck.size() != mean.size()) throw ShapeError("average_checkpoints: tensor count differs");
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const auto& src = ck[i];
      auto& dst = mean[i];
      if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols())
        throw ShapeError("average_checkpoints: mismatch at '" + dst.name + "': " + nn::shape_str(src.value) + " vs " +
                         nn::shape_str(dst.value));
      const Eigen::MatrixXd moved = dst.value + (src.value - dst.value) / double(k + 1);
      // Equal entries stay put so signed zeros survive.
      dst.value = (src.value.array() == dst.value.array()).select(dst.value, moved);
    }
  }
  return mean;
}

}  // namespace kqg
