#pragma once

#include <filesystem>
#include <iosfwd>

#include "fpad/common/kv_text.hpp"
#include "fpad/losses/losses.hpp"
#include "fpad/network/network.hpp"

// Checkpoint layout:
//   fpad-checkpoint 1
//   <sorted key=value lines: net.*, head.s, head.m, center.alpha, loss.lambda, extra keys>
//   ---
//   u32 count, then per tensor: u32 name length, name bytes, tensor
// Tensors are written in a fixed order, so the same state always yields the
// same bytes.
namespace fpad::network {

struct Checkpoint {
  Network net;
  losses::CenterBank bank;
  double lambda = 0.0;
  KeyValues meta;  // free-form keys recorded by the caller (e.g. train.*)
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fpad::network
