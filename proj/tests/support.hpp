#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(TQAPRM_FIXTURES) / name; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::path(TQAPRM_TEST_TMP) / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Reference implementations written from the definitions, sharing no code
// with the library.

namespace oracle {

/// Mean of quarter-valued rewards as an exact fraction quarters/steps.
struct QuarterMean {
  long quarters = 0;
  long steps = 1;
};

inline QuarterMean quarter_mean(const std::vector<double>& rewards) {
  QuarterMean m{0, static_cast<long>(rewards.size())};
  for (double r : rewards) m.quarters += static_cast<long>(r * 4 + 0.5);
  return m;
}

/// a > b, compared exactly.
inline bool greater(const QuarterMean& a, const QuarterMean& b) { return a.quarters * b.steps > b.quarters * a.steps; }

/// Position of the highest mean, lowest position on ties, by checking every
/// candidate against every other one.
inline std::size_t best_by_mean(const std::vector<std::vector<double>>& paths) {
  for (std::size_t i = 0; i < paths.size(); ++i) {
    bool wins = true;
    const auto mi = quarter_mean(paths[i]);
    for (std::size_t j = 0; j < paths.size() && wins; ++j) {
      const auto mj = quarter_mean(paths[j]);
      if (j < i && !greater(mi, mj)) wins = false;
      if (j > i && greater(mj, mi)) wins = false;
    }
    if (wins) return i;
  }
  return paths.size();
}

/// Consistent: no correct label anywhere after an incorrect one.
inline bool consistent(const std::vector<int>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (labels[i] == 0 && labels[j] == 1) return false;
  return true;
}

/// Expected RPE label of a step from success counts with equal rollout
/// numbers: nullopt for Undefined, else Yes iff curr/prev >= tau.
inline std::optional<bool> rpe_yes(int prev_successes, int curr_successes, double tau) {
  if (prev_successes == 0) return std::nullopt;
  return static_cast<double>(curr_successes) >= tau * static_cast<double>(prev_successes);
}

/// Lower-cased, trimmed answer used to decide correctness in property tests
/// whose answers are plain lowercase words.
inline bool same_word(const std::optional<std::string>& a, const std::string& gold) {
  return a && *a == gold;
}

}  // namespace oracle
}  // namespace testing
