#include "kqg/pipeline.hpp"

#include <fstream>

#include "kqg/checkpoint.hpp"
#include "kqg/errors.hpp"

namespace kqg {

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  for (const auto& l : lines) out << l << '\n';
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) lines.push_back(l);
  return lines;
}

int positive(const Config& cfg, const char* key) {
  const long v = cfg.integer(key);
  if (v < 1) throw ValidationError(std::string("config key '") + key + "' must be >= 1");
  return static_cast<int>(v);
}

}  // namespace

ModelConfig model_config_from(const Config& cfg, const Vocabularies& vocabs) {
  ModelConfig m;
  m.vocab_size = vocabs.words.size();
  m.pos_tags = vocabs.pos.size();
  m.ner_tags = vocabs.ner.size();
  m.hidden_size = positive(cfg, "hidden_size");
  m.layers = positive(cfg, "layers");
  m.word_dim = positive(cfg, "word_dim");
  m.bio_dim = m.ner_dim = m.pos_dim = positive(cfg, "feature_dim");
  m.dropout = cfg.real("dropout");
  validate_model_config(m);
  return m;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.mode = parse_train_mode(cfg.str("mode"));
  t.itf.n = positive(cfg, "itf_n");
  t.itf.cycles = positive(cfg, "itf_cycles");
  t.steps = cfg.integer("steps");
  if (t.steps < 0) throw ValidationError("config key 'steps' must be >= 0");
  t.batch_size = positive(cfg, "batch_size");
  t.adam.lr = cfg.real("lr");
  if (!(t.adam.lr > 0)) throw ValidationError("config key 'lr' must be positive");
  t.clip = cfg.real("clip");
  t.eval_every = static_cast<int>(cfg.integer("eval_every"));
  t.avg_k = positive(cfg, "avg_k");
  t.max_len = positive(cfg, "max_len");
  t.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  return t;
}

Ablation ablation_from(const Config& cfg) {
  Ablation a;
  a.knowledge = !cfg.flag("no_knowledge");
  a.rc = !cfg.flag("no_rc");
  a.tg = !cfg.flag("no_tg");
  return a;
}

BeamConfig beam_config_from(const Config& cfg) {
  BeamConfig b;
  b.beam = positive(cfg, "beam");
  b.max_len = positive(cfg, "max_len");
  return b;
}

void save_model(const std::filesystem::path& dir, const Config& cfg, const Vocabularies& vocabs,
                const UnifiedModel& model) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "config.txt");
    if (!out) throw ParseError("cannot write '" + (dir / "config.txt").string() + "'");
    out << cfg.dump();
  }
  vocabs.words.save(dir / "vocab.txt");
  write_lines(dir / "pos.txt", vocabs.pos.tags());
  write_lines(dir / "ner.txt", vocabs.ner.tags());
  write_checkpoint(dir / "model.ckpt", snapshot(model.params()));
}

LoadedModel load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ParseError("model directory '" + dir.string() + "' not found");
  LoadedModel out;
  out.config.load_file(dir / "config.txt");
  out.vocabs.words = Vocabulary::load(dir / "vocab.txt");
  out.vocabs.pos = TagVocabulary(read_lines(dir / "pos.txt"));
  out.vocabs.ner = TagVocabulary(read_lines(dir / "ner.txt"));
  const auto mcfg = model_config_from(out.config, out.vocabs);
  out.model = std::make_unique<UnifiedModel>(mcfg, ablation_from(out.config),
                                             static_cast<std::uint64_t>(out.config.integer("seed")));
  restore(out.model->params(), read_checkpoint(dir / "model.ckpt"));
  return out;
}

}  // namespace kqg
