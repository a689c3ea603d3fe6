#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "angiomatch/errors.hpp"
#include "angiomatch/matcher.hpp"

namespace angiomatch::matcher {

// Weights file: magic "AMWB", u32 version, u32 num_blocks, u32 dim,
// u32 local_channels, u32 pos_hidden, u32 n_tensors, then (u32 rows, u32 cols)
// per tensor and the little-endian float32 payload, both in collect_tensors
// order.

inline void save_weights(const std::string& path, const MatcherParams& params) {
  MatcherParams& p = const_cast<MatcherParams&>(params);  // collect_tensors needs mutability
  auto tensors = collect_tensors(p);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  const char magic[4] = {'A', 'M', 'W', 'B'};
  f.write(magic, 4);
  const std::uint32_t header[6] = {1u,
                                   static_cast<std::uint32_t>(params.num_blocks()),
                                   static_cast<std::uint32_t>(params.dim),
                                   static_cast<std::uint32_t>(params.local_channels()),
                                   static_cast<std::uint32_t>(params.pos_mlp.w1.rows()),
                                   static_cast<std::uint32_t>(tensors.size())};
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (const auto& t : tensors) {
    const std::uint32_t shape[2] = {static_cast<std::uint32_t>(t.rows),
                                    static_cast<std::uint32_t>(t.cols)};
    f.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  }
  for (const auto& t : tensors) {
    std::vector<float> payload(t.data, t.data + t.size());
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  if (!f) throw IoError("short write: " + path);
}

inline MatcherParams load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "AMWB", 4) != 0) throw FormatError("not a weights file: " + path);
  std::uint32_t header[6];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!f || header[0] != 1) throw FormatError("unsupported weights version: " + path);
  const int num_blocks = static_cast<int>(header[1]);
  const int dim = static_cast<int>(header[2]);
  const int local_channels = static_cast<int>(header[3]);
  const int pos_hidden = static_cast<int>(header[4]);
  Rng rng(0);
  MatcherParams params = init_params(dim, num_blocks, rng, local_channels, pos_hidden);
  auto tensors = collect_tensors(params);
  if (tensors.size() != header[5]) throw FormatError("tensor count mismatch: " + path);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(tensors.size());
  for (auto& s : shapes) {
    std::uint32_t shape[2];
    f.read(reinterpret_cast<char*>(shape), sizeof(shape));
    s = {shape[0], shape[1]};
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (shapes[i].first != static_cast<std::uint32_t>(tensors[i].rows) ||
        shapes[i].second != static_cast<std::uint32_t>(tensors[i].cols))
      throw FormatError("tensor shape mismatch at " + tensors[i].name + ": " + path);
    std::vector<float> payload(tensors[i].size());
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!f) throw FormatError("truncated weights payload: " + path);
    for (long k = 0; k < tensors[i].size(); ++k) tensors[i].data[k] = payload[k];
  }
  return params;
}

}  // namespace angiomatch::matcher
