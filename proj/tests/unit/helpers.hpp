#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testing_util {

inline ed2lm::ModelConfig tiny_config(std::uint32_t funnel_blocks = 0) {
  ed2lm::ModelConfig c;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 23;
  c.max_doc_len = 24;
  c.max_query_len = 6;
  c.funnel_blocks = funnel_blocks;
  c.seed = 7;
  return c;
}

inline ed2lm::TokenSequence random_tokens(std::mt19937_64& rng, std::size_t n, std::uint32_t vocab,
                                          ed2lm::TokenId lowest = ed2lm::kNumSpecialTokens) {
  std::uniform_int_distribution<ed2lm::TokenId> pick(lowest, vocab - 1);
  std::vector<ed2lm::TokenId> ids(n);
  for (auto& id : ids) id = pick(rng);
  return ed2lm::TokenSequence(std::move(ids));
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1e-12});
  return std::fabs(a - b) / scale;
}

// Fresh, empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "ed2lm_test";
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_util
