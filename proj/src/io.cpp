#include "pics/io.hpp"

#include "pics/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pics {

namespace {

int to_level(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

// Next header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw FormatError("truncated netpbm header");
}

struct NetpbmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
};

NetpbmHeader read_header(std::istream& in) {
  NetpbmHeader h;
  h.magic = header_token(in);
  h.width = std::stoi(header_token(in));
  h.height = std::stoi(header_token(in));
  h.maxval = std::stoi(header_token(in));
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 255) throw FormatError("unsupported netpbm header");
  in.get();  // single whitespace before raster
  return h;
}

}  // namespace

void write_pgm(const fs::path& path, const Mask& m) {
  auto out = open_out(path);
  out << "P2\n" << m.width() << ' ' << m.height() << "\n255\n";
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) out << (x ? " " : "") << to_level(m(y, x));
    out << '\n';
  }
}

Mask read_pgm(const fs::path& path) {
  auto in = open_in(path);
  const NetpbmHeader h = read_header(in);
  Mask m(h.width, h.height);
  if (h.magic == "P2") {
    for (int y = 0; y < h.height; ++y) {
      for (int x = 0; x < h.width; ++x) {
        int v = 0;
        if (!(in >> v)) throw FormatError("truncated P2 raster in " + path.string());
        m(y, x) = static_cast<double>(v) / h.maxval;
      }
    }
  } else if (h.magic == "P5") {
    std::vector<unsigned char> buf(static_cast<std::size_t>(h.width) * h.height);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw FormatError("truncated P5 raster in " + path.string());
    }
    for (int y = 0; y < h.height; ++y) {
      for (int x = 0; x < h.width; ++x) m(y, x) = buf[static_cast<std::size_t>(y) * h.width + x] / double(h.maxval);
    }
  } else {
    throw FormatError("not a PGM file: " + path.string());
  }
  return m;
}

void write_ppm(const fs::path& path, const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) throw ShapeError("write_ppm: 1 or 3 channels required");
  auto out = open_out(path);
  out << (img.channels() == 3 ? "P6\n" : "P5\n") << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> buf;
  buf.reserve(static_cast<std::size_t>(img.width()) * img.height() * img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) buf.push_back(static_cast<unsigned char>(to_level(img.at(c, y, x))));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Image read_ppm(const fs::path& path) {
  auto in = open_in(path);
  const NetpbmHeader h = read_header(in);
  const int channels = h.magic == "P6" ? 3 : h.magic == "P5" ? 1 : 0;
  if (channels == 0) throw FormatError("not a binary PPM/PGM file: " + path.string());
  std::vector<unsigned char> buf(static_cast<std::size_t>(h.width) * h.height * channels);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw FormatError("truncated raster in " + path.string());
  }
  Image img(h.width, h.height, channels);
  std::size_t at = 0;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = buf[at++] / double(h.maxval);
    }
  }
  return img;
}

void write_rescaled_pgm(const fs::path& path, const Grid& values) {
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  const double span = hi - lo;
  Grid unit = span > 0 ? Grid((values - lo) / span) : Grid(Grid::Zero(values.rows(), values.cols()));
  write_pgm(path, Mask(std::move(unit)));
  fs::path sidecar = path;
  sidecar.replace_extension(".json");
  write_json(sidecar, json{{"min", lo}, {"max", hi}});
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void to_json(json& j, const BBox& b) { j = json::array({b.x0, b.y0, b.x1, b.y1}); }

void from_json(const json& j, BBox& b) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be a JSON array [x0,y0,x1,y1]");
  b = BBox{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  check_box(b);
}

}  // namespace pics
