#pragma once

#include "travproxy/encoder.hpp"
#include "travproxy/proxybank.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace travproxy {

std::string to_string(TrainMode m);
TrainMode parse_mode(const std::string& s);

struct Checkpoint {
  EncoderModel<double> model;
  ProxyBank<double> bank;
  TrainMode mode = TrainMode::Full;
};

// Text layout, one record per line:
//   travproxy-checkpoint 1
//   mode <Supervised|ProxyNoUnlabeled|ProxyNoReinit|Full>
//   k_enc <int>
//   dim <int>
//   temperature <double>
//   tensor <name> <rows> <cols>
//   <rows*cols values, column-major, shortest round-trip decimal>
// Tensors: input.shift, input.scale, the encoder weights in
// EncoderModel::for_each_weight order, then bank.negative and bank.positive
// (d x K). Loading reproduces every value bit for bit.
void write_checkpoint(const Checkpoint& ck, std::ostream& out);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace travproxy
