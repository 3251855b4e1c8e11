#ifndef TGGM_CHECKPOINT_HPP
#define TGGM_CHECKPOINT_HPP

#include <string>

#include "tggm/model.hpp"

namespace tggm {

// Checkpoint = JSON manifest at `path` (dims, head, noise variances,
// format version, sidecar name) + binary sidecar at `path + ".bin"`
// holding all matrices concatenated row-major as little-endian float64
// in the order (W0, b0, W1, b1, ..., Wout, bout).
void save_checkpoint(const TggmModel& model, const std::string& path,
                     std::uint64_t seed = 0);

TggmModel load_checkpoint(const std::string& path);

}  // namespace tggm

#endif
