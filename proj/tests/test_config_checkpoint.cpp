#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <map>

#include "kqg/checkpoint.hpp"
#include "kqg/config.hpp"
#include "kqg/errors.hpp"
#include "kqg/pipeline.hpp"
#include "toy_data.hpp"

using namespace kqg;
using Mat = Eigen::MatrixXd;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("kqg_test_" + name);
}

Checkpoint sample_checkpoint() {
  return {{"qg.a", nn::Group::QgCore, (Mat(2, 3) << 1, -2.5, 3e-300, 0, 1e300, -0.0).finished()},
          {"know.b", nn::Group::Knowledge, Mat::Constant(1, 1, 0.1)}};
}

}  // namespace

TEST(Config, DefaultsAndTypedAccess) {
  Config cfg;
  EXPECT_EQ(cfg.integer("hidden_size"), 600);
  EXPECT_EQ(cfg.integer("itf_n"), 3000);
  EXPECT_EQ(cfg.integer("itf_cycles"), 3);
  EXPECT_DOUBLE_EQ(cfg.real("lr"), 0.001);
  EXPECT_EQ(cfg.integer("beam"), 10);
  EXPECT_FALSE(cfg.flag("no_rc"));
  EXPECT_EQ(cfg.str("mode"), "itf");
  EXPECT_THROW(cfg.str("nope"), ValidationError);
}

TEST(Config, ParsesKeyValueLines) {
  Config cfg;
  cfg.load_string("# comment\nhidden_size = 64\n\n  lr=0.01  # trailing\nno_tg = true\n");
  EXPECT_EQ(cfg.integer("hidden_size"), 64);
  EXPECT_DOUBLE_EQ(cfg.real("lr"), 0.01);
  EXPECT_TRUE(cfg.flag("no_tg"));
}

TEST(Config, RejectsMalformedInput) {
  Config cfg;
  try {
    cfg.load_string("layers = 1\nthis line is wrong\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 2u);
  }
  EXPECT_THROW(cfg.load_string("hiden_size = 4\n"), ValidationError);
  cfg.set("layers", "two");
  EXPECT_THROW(cfg.integer("layers"), ValidationError);
  cfg.set("no_rc", "maybe");
  EXPECT_THROW(cfg.flag("no_rc"), ValidationError);
}

TEST(Config, EnvironmentOverridesFile) {
  Config cfg;
  cfg.load_string("hidden_size = 64\nbeam = 3\n");
  const std::map<std::string, std::string> env{{"KQG_HIDDEN_SIZE", "32"}, {"KQG_UNRELATED", "x"}};
  cfg.apply_env([&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(cfg.integer("hidden_size"), 32);
  EXPECT_EQ(cfg.integer("beam"), 3);
  cfg.set("hidden_size", "16");
  EXPECT_EQ(cfg.integer("hidden_size"), 16);
}

TEST(Config, DumpRoundTrips) {
  Config a;
  a.set("dropout", "0.25");
  a.set("mode", "pure-only");
  Config b;
  b.load_string(a.dump());
  EXPECT_EQ(b.dump(), a.dump());
}

TEST(Config, PipelineTranslation) {
  Config cfg;
  cfg.load_file(kqg::testing::data_path("toy.cfg"));
  const auto tc = train_config_from(cfg);
  EXPECT_EQ(tc.itf.n, 20);
  EXPECT_EQ(tc.itf.cycles, 2);
  EXPECT_EQ(tc.batch_size, 4);
  cfg.set("no_rc", "true");
  EXPECT_FALSE(ablation_from(cfg).rc);
  EXPECT_TRUE(ablation_from(cfg).tg);
  EXPECT_EQ(beam_config_from(cfg).beam, 4);
  cfg.set("mode", "alternate");
  EXPECT_THROW(train_config_from(cfg), ValidationError);
}

TEST(Checkpoint, BinaryRoundTripIsExact) {
  const auto path = temp_path("roundtrip.ckpt");
  const auto ckpt = sample_checkpoint();
  write_checkpoint(path, ckpt);
  const auto back = read_checkpoint(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < ckpt.size(); ++i) {
    EXPECT_EQ(back[i].name, ckpt[i].name);
    EXPECT_EQ(back[i].group, ckpt[i].group);
    EXPECT_EQ(std::memcmp(back[i].value.data(), ckpt[i].value.data(), sizeof(double) * ckpt[i].value.size()), 0);
  }
  EXPECT_EQ(std::filesystem::file_size(path), 8u + 4u + (4u + 4u + 1u + 1u + 4u + 16u + 48u) + (4u + 6u + 1u + 1u + 4u + 16u + 8u));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsBadFiles) {
  const auto path = temp_path("bad.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPTxxxx";
  }
  EXPECT_THROW(read_checkpoint(path), ParseError);
  write_checkpoint(path, sample_checkpoint());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(read_checkpoint(path), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint(path), ParseError);
}

TEST(Checkpoint, RestoreChecksNamesAndShapes) {
  ParameterSet params;
  params.add("qg.a", nn::Group::QgCore, 2, 3);
  params.add("know.b", nn::Group::Knowledge, 1, 1);
  restore(params, sample_checkpoint());
  EXPECT_EQ(params.at("qg.a").value(0, 1), -2.5);
  auto wrong = sample_checkpoint();
  wrong[1].value = Mat::Zero(2, 1);
  EXPECT_THROW(restore(params, wrong), ShapeError);
  wrong = sample_checkpoint();
  wrong[0].name = "qg.z";
  EXPECT_THROW(restore(params, wrong), ShapeError);
  wrong.pop_back();
  EXPECT_THROW(restore(params, wrong), ShapeError);
}

TEST(Checkpoint, AveragingIsExactOnIdenticalInputs) {
  const auto a = sample_checkpoint();
  const std::vector<Checkpoint> same(5, a);
  const auto avg = average_checkpoints(same);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(std::memcmp(avg[i].value.data(), a[i].value.data(), sizeof(double) * a[i].value.size()), 0);

  Checkpoint b = a;
  for (auto& t : b) t.value = Mat::Constant(t.value.rows(), t.value.cols(), 4.0);
  Checkpoint c = a;
  for (auto& t : c) t.value = Mat::Constant(t.value.rows(), t.value.cols(), 1.0);
  const std::vector<Checkpoint> pair{b, c};
  EXPECT_EQ(average_checkpoints(pair)[0].value, Mat::Constant(2, 3, 2.5));
  EXPECT_THROW(average_checkpoints(std::vector<Checkpoint>{}), ValidationError);
}

TEST(ModelDirectory, SaveLoadReproducesParameters) {
  const auto samples = kqg::testing::toy_equipped();
  Config cfg;
  cfg.load_file(kqg::testing::data_path("toy.cfg"));
  const auto vocabs = build_vocabularies(samples, 5000);
  UnifiedModel model(model_config_from(cfg, vocabs), ablation_from(cfg), 9, 0.1);
  const auto dir = temp_path("model_dir");
  std::filesystem::remove_all(dir);
  save_model(dir, cfg, vocabs, model);
  const auto loaded = load_model(dir);
  EXPECT_EQ(loaded.vocabs.words.tokens(), vocabs.words.tokens());
  EXPECT_EQ(loaded.model->params().group_hash(nn::Group::QgCore), model.params().group_hash(nn::Group::QgCore));
  EXPECT_EQ(loaded.model->params().group_hash(nn::Group::Knowledge), model.params().group_hash(nn::Group::Knowledge));
  std::filesystem::remove_all(dir);
}
