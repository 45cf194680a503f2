#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace exitlab::io {

/// Shortest round-trip decimal form; deterministic across runs.
std::string format_double(double v);

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);
  CsvWriter(std::initializer_list<const char*> header);
  void row(const std::vector<double>& values);
  void raw_row(const std::vector<std::string>& cells);
  const std::string& str() const { return out_; }

 private:
  std::string out_;
  std::size_t columns_ = 0;
};

std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t v);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

/// Minimal SVG line-plot emitter: axes plus one polyline per series.
/// Plots are conveniences only, never acceptance evidence.
class SvgPlot {
 public:
  SvgPlot(int width, int height, std::string title);
  void add_series(const std::vector<double>& x, const std::vector<double>& y,
                  const std::string& color);
  std::string render() const;

 private:
  int width_, height_;
  std::string title_;
  struct Series {
    std::vector<double> x, y;
    std::string color;
  };
  std::vector<Series> series_;
};

}  // namespace exitlab::io
