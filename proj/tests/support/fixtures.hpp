#pragma once

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hicu/error.hpp"
#include "hicu/label_tree.hpp"
#include "support/toys.hpp"

namespace fixture {

inline hicu::RangeTable ranges() { return toy::ranges(); }

inline std::vector<std::string> labels(const hicu::Path& p) {
  std::vector<std::string> out;
  for (const auto& n : p.nodes) out.push_back(n.label);
  return out;
}

inline hicu::Path path_of(const std::vector<std::string>& labels) {
  hicu::Path p;
  for (std::size_t i = 0; i < labels.size(); ++i) p.nodes.push_back({static_cast<int>(i) + 1, labels[i]});
  return p;
}

inline hicu::ErrorCode error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const hicu::Error& e) {
    return e.code();
  }
  FAIL("expected a hicu::Error");
  return hicu::ErrorCode::usage;
}

inline std::string error_message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const hicu::Error& e) {
    return e.what();
  }
  FAIL("expected a hicu::Error");
  return {};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("hicu_test_" + name)) {
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

}  // namespace fixture
