#pragma once

// A tiny-profile corpus shared by the tests of one binary, synthesised once
// into the temp directory.

#include "dsr/config.hpp"
#include "dsr/data.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace dsr::testing {

struct ToyWorld {
  PipelineConfig cfg;
  std::filesystem::path dir;
  std::unique_ptr<data::Dataset> data;
};

inline const ToyWorld& toy_world(const std::string& tag) {
  static std::unique_ptr<ToyWorld> world;
  if (!world) {
    world = std::make_unique<ToyWorld>();
    world->cfg = profile_config("tiny");
    world->cfg.corpus.seed = 5;
    world->dir = std::filesystem::temp_directory_path() / ("dsr_toy_" + tag);
    std::filesystem::remove_all(world->dir);
    const corpus::Manifest m = corpus::synthesize_toy_corpus(world->cfg.corpus, world->dir);
    world->data = std::make_unique<data::Dataset>(m, data::corpus_stats(m),
                                                  corpus::toy_inventory(world->cfg.corpus.phoneme_inventory_size));
  }
  return *world;
}

}  // namespace dsr::testing
