#pragma once

// Self-describing parameter container:
//
//   8 bytes   magic "RVAECKPT"
//   8 bytes   little-endian u64 length L of the JSON header
//   L bytes   JSON header: {"format_version", "metadata", "tensors": [
//               {"name", "rows", "cols", "offset", "bytes"}, ...]}
//   payload   little-endian IEEE-754 doubles, row-major, in manifest order;
//             offsets are relative to the start of the payload.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rvae/nn.h"

namespace rvae {

inline constexpr std::int64_t kContainerFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Container {
  nlohmann::json metadata;
  std::vector<NamedTensor> tensors;

  // Throws IoError when the tensor is absent.
  const Matrix& tensor(const std::string& name) const;
};

std::string serialize_container(const Container& container);
Container deserialize_container(const std::string& bytes);

void write_container(const std::string& path, const Container& container);
Container read_container(const std::string& path);

}  // namespace rvae
