#pragma once

#include <memory>
#include <random>
#include <string>

#include "vqdraw/refiner.hpp"
#include "vqdraw/training.hpp"

namespace vqdraw {

// Everything needed to resume a run bit-exactly: both configs, parameters,
// Adam accumulators, the step counter, and the data-order RNG state.
struct LoadedCheckpoint {
  RefinerConfig refiner_cfg;
  TrainConfig train_cfg;
  std::unique_ptr<Refiner<float>> refiner;
  AdamState<float> adam;
  long step = 0;
  std::mt19937_64 rng;
};

// File layout: magic "VQDR", version u16, self-describing key=value config
// text block, named parameter blobs (f32 LE with shape headers), Adam state,
// serialized RNG. All multi-byte integers little-endian. Writes go through a
// temp file plus rename so a crash never leaves a half-written checkpoint.
void save_checkpoint(const std::string& path, const Refiner<float>& refiner,
                     const TrainConfig& train_cfg,
                     const AdamState<float>& adam, long step,
                     const std::mt19937_64& rng);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace vqdraw
