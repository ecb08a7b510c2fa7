#pragma once

#include <optional>
#include <string>

#include "crdt/optimizer.hpp"
#include "crdt/tensor.hpp"

namespace crdt {

// Versioned JSON checkpoint: a flat named map of shape+data records plus an
// optional free-form metadata object and optional optimizer state. Doubles
// survive the round trip bit-exactly (shortest-round-trip formatting).
//
//   {
//     "format": "crdt-checkpoint",
//     "version": 1,
//     "meta": { ... },
//     "tensors": { "name": {"shape": [..], "data": [..], "requires_grad": b} },
//     "optimizer": { "step_count": n, "moments": { "name": {"m": [..], "v": [..]} } }
//   }

struct Checkpoint {
    ParamStore tensors;
    std::string meta_json = "{}";  // serialized metadata object
    std::optional<std::uint64_t> opt_step_count;
    std::map<std::string, Adam::Moments> opt_moments;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace crdt
