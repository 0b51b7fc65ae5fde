#include "manifest.h"

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae::cli {

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 initialization failed");
  }
  std::array<char, 1 << 16> buffer;
  while (in) {
    in.read(buffer.data(), buffer.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest;
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &length);
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    char byte[3];
    std::snprintf(byte, sizeof(byte), "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {}

nlohmann::json RunManifest::finish(const std::string& path) const {
  auto files = [](const std::vector<std::string>& paths) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& p : paths) list.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    return list;
  };
  const nlohmann::json doc{
      {"tool", "rvae"},
      {"version", kToolVersion},
      {"command", command_},
      {"argv", argv_},
      {"config", config_},
      {"seeds", seeds_},
      {"inputs", files(inputs_)},
      {"outputs", files(outputs_)},
      {"wall_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
  csv::write_text_file(path, doc.dump(2) + "\n");
  return doc;
}

}  // namespace rvae::cli
