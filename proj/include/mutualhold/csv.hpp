#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mutualhold {

/// Doubles serialized with 17 significant digits so CSV artifacts round-trip
/// bit for bit.
inline std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

/// Comma-separated, header row, LF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open output file: " + path.string());
  }

  void header(std::initializer_list<std::string_view> names) {
    bool first = true;
    for (auto name : names) {
      if (!first) out_ << ',';
      out_ << name;
      first = false;
    }
    out_ << '\n';
  }

  CsvWriter& field(double v) {
    sep();
    out_ << format_double(v);
    return *this;
  }
  CsvWriter& field(std::uint64_t v) {
    sep();
    out_ << v;
    return *this;
  }
  CsvWriter& field(int v) {
    sep();
    out_ << v;
    return *this;
  }
  CsvWriter& field(std::string_view v) {
    sep();
    out_ << v;
    return *this;
  }
  void endrow() {
    out_ << '\n';
    started_ = false;
  }

  void row(std::span<const double> values) {
    for (double v : values) field(v);
    endrow();
  }

 private:
  void sep() {
    if (started_) out_ << ',';
    started_ = true;
  }
  std::ofstream out_;
  bool started_ = false;
};

}  // namespace mutualhold
