#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "airglyph/core_data.hpp"

namespace testutil {

// Fresh directory under the system temp root, unique per call.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto base = std::filesystem::temp_directory_path() /
                    ("airglyph-" + tag + "-" + std::to_string(::getpid()) + "-" +
                     std::to_string(counter++));
  std::filesystem::create_directories(base);
  return base;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  return read_file(a) == read_file(b);
}

inline airglyph::Recording make_recording(const std::string& id, const std::string& subject,
                                          airglyph::WritingMode mode, char letter,
                                          std::size_t n_samples = 32, double rate_hz = 100.0) {
  airglyph::Recording r;
  r.id = id;
  r.subject = subject;
  r.mode = mode;
  r.letter = airglyph::LetterLabel::from_char(letter);
  r.rate_hz = rate_hz;
  for (std::size_t i = 0; i < n_samples; ++i) {
    // binary fractions so storage at 6 decimals is lossless
    const double t = static_cast<double>(i);
    r.samples.push_back({0.25 * t, -0.5 + 0.0625 * t, 1.0});
  }
  return r;
}

}  // namespace testutil
