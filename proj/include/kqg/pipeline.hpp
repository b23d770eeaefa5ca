#pragma once

// Glue between the flat config, the model directory on disk, and the
// training and inference entry points.

#include <filesystem>
#include <memory>

#include "kqg/config.hpp"
#include "kqg/trainer.hpp"

namespace kqg {

ModelConfig model_config_from(const Config& cfg, const Vocabularies& vocabs);
TrainConfig train_config_from(const Config& cfg);
Ablation ablation_from(const Config& cfg);
BeamConfig beam_config_from(const Config& cfg);

struct LoadedModel {
  Config config;
  Vocabularies vocabs;
  std::unique_ptr<UnifiedModel> model;
};

/// Model directory: config.txt, vocab.txt, pos.txt, ner.txt, model.ckpt.
void save_model(const std::filesystem::path& dir, const Config& cfg, const Vocabularies& vocabs,
                const UnifiedModel& model);
LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace kqg
