#include "manifest.hpp"

#include "ed2lm/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

#ifndef ED2LM_VERSION
#define ED2LM_VERSION "unknown"
#endif

namespace ed2lm::cli {

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex;
  hex.reserve(2 * len);
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof(byte), "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

nlohmann::ordered_json RunManifest::to_json(const std::filesystem::path& out_dir) const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["tool_version"] = ED2LM_VERSION;
  j["seed"] = seed;
  j["config"] = config;
  auto& in = j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& p : inputs) in[p.string()] = file_sha256(p);
  auto& out = j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& p : outputs) out[p.generic_string()] = file_sha256(out_dir / p);
  j["timestamp"] = utc_timestamp();
  return j;
}

void RunManifest::write(const std::filesystem::path& out_dir) const {
  const auto path = out_dir / kManifestName;
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f << to_json(out_dir).dump(2) << '\n';
}

}  // namespace ed2lm::cli
