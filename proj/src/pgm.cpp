#include "pgm.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace weakmap {

namespace {

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    WM_CHECK(f.good(), ErrorCategory::kIo, "cannot write '" << tmp << "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    WM_CHECK(f.good(), ErrorCategory::kIo, "failed writing '" << tmp << "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot move '" << tmp << "' to '" << path << "'");
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

void write_pgm16(const std::string& path, const Tensor& image) {
  WM_CHECK(image.rank() == 3 && image.extent(2) == 1, ErrorCategory::kDimension,
           "write_pgm16: image must be [H,W,1], got " << shape_str(image.shape()));
  const int H = image.extent(0), W = image.extent(1);
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n65535\n";
  out.reserve(out.size() + static_cast<size_t>(H * W) * 2);
  for (int i = 0; i < H * W; ++i) {
    double v = image.v(i);
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    const unsigned u = static_cast<unsigned>(v * 65535.0 + 0.5);
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>(u & 0xff));
  }
  write_atomic(path, out);
}

Tensor read_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  WM_CHECK(in.good(), ErrorCategory::kIo, "cannot open PGM '" << path << "'");
  WM_CHECK(next_token(in) == "P5", ErrorCategory::kIo, "'" << path << "' is not a binary PGM");
  const int W = std::stoi(next_token(in));
  const int H = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  WM_CHECK(W > 0 && H > 0, ErrorCategory::kIo, "'" << path << "' has bad dimensions");
  WM_CHECK(maxval == 65535, ErrorCategory::kIo,
           "'" << path << "' has maxval " << maxval << ", expected 65535");
  Tensor image(Shape{H, W, 1});
  std::vector<char> buf(static_cast<size_t>(H * W) * 2);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  WM_CHECK(in.gcount() == static_cast<std::streamsize>(buf.size()), ErrorCategory::kIo,
           "'" << path << "' truncated");
  for (int i = 0; i < H * W; ++i) {
    const unsigned hi = static_cast<unsigned char>(buf[static_cast<size_t>(i) * 2]);
    const unsigned lo = static_cast<unsigned char>(buf[static_cast<size_t>(i) * 2 + 1]);
    image.v(i) = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return image;
}

void write_pgm8(const std::string& path, int height, int width,
                const std::vector<double>& values01) {
  WM_CHECK(static_cast<size_t>(height * width) == values01.size(), ErrorCategory::kDimension,
           "write_pgm8: " << values01.size() << " values do not fill " << width << "x" << height);
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : values01) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    out.push_back(static_cast<char>(static_cast<unsigned>(v * 255.0 + 0.5) & 0xff));
  }
  write_atomic(path, out);
}

}  // namespace weakmap
