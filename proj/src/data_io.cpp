#include "vqdraw/data_io.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "vqdraw/errors.hpp"

namespace vqdraw {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("idx: cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) throw FormatError("idx: truncated header");
  return ((std::uint32_t)b[off] << 24) | ((std::uint32_t)b[off + 1] << 16) |
         ((std::uint32_t)b[off + 2] << 8) | b[off + 3];
}

void put_be32(std::ofstream& f, std::uint32_t v) {
  const char out[4] = {(char)(v >> 24), (char)(v >> 16), (char)(v >> 8),
                       (char)v};
  f.write(out, 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const auto buf = read_all(images_path);
  const std::uint32_t magic = be32(buf, 0);
  if (magic != kImageMagic) {
    std::ostringstream os;
    os << "idx: '" << images_path << "' has magic 0x" << std::hex << magic
       << ", expected 0x" << kImageMagic;
    throw FormatError(os.str());
  }
  const std::uint32_t count = be32(buf, 4);
  const std::uint32_t rows = be32(buf, 8);
  const std::uint32_t cols = be32(buf, 12);
  const std::size_t expect = 16 + (std::size_t)count * rows * cols;
  if (buf.size() != expect)
    throw FormatError("idx: '" + images_path + "' holds " +
                      std::to_string(buf.size()) + " bytes, header implies " +
                      std::to_string(expect));

  Dataset ds;
  ds.data_shape = {1, (int)rows, (int)cols};
  ds.normalization = "byte/255";
  ds.examples.reserve(count);
  const std::size_t px = (std::size_t)rows * cols;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<float> img(px);
    for (std::size_t j = 0; j < px; ++j)
      img[j] = (float)buf[16 + i * px + j] / 255.0f;
    ds.examples.push_back(std::move(img));
  }

  if (!labels_path.empty()) {
    const auto lbuf = read_all(labels_path);
    if (be32(lbuf, 0) != kLabelMagic) {
      std::ostringstream os;
      os << "idx: '" << labels_path << "' has magic 0x" << std::hex
         << be32(lbuf, 0) << ", expected 0x" << kLabelMagic;
      throw FormatError(os.str());
    }
    const std::uint32_t lcount = be32(lbuf, 4);
    if (lcount != count || lbuf.size() != 8 + (std::size_t)count)
      throw FormatError("idx: label file '" + labels_path +
                        "' does not match " + std::to_string(count) +
                        " images");
    ds.labels.assign(lbuf.begin() + 8, lbuf.end());
  }
  return ds;
}

void write_idx_images(const std::string& path,
                      const std::vector<std::vector<std::uint8_t>>& images,
                      int rows, int cols) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("idx: cannot open '" + path + "' for writing");
  put_be32(f, kImageMagic);
  put_be32(f, (std::uint32_t)images.size());
  put_be32(f, (std::uint32_t)rows);
  put_be32(f, (std::uint32_t)cols);
  for (const auto& img : images) {
    if ((int)img.size() != rows * cols)
      throw ShapeError("idx: image size mismatch");
    f.write((const char*)img.data(), (std::streamsize)img.size());
  }
  if (!f) throw FormatError("idx: write failed for '" + path + "'");
}

void write_idx_labels(const std::string& path,
                      const std::vector<std::uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("idx: cannot open '" + path + "' for writing");
  put_be32(f, kLabelMagic);
  put_be32(f, (std::uint32_t)labels.size());
  f.write((const char*)labels.data(), (std::streamsize)labels.size());
  if (!f) throw FormatError("idx: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------

void MixtureSpec::validate() const {
  if (dim < 1) throw FormatError("mixture: dim must be >= 1");
  if (components.empty()) throw FormatError("mixture: no components");
  double total = 0;
  for (const auto& c : components) {
    if (c.weight <= 0) throw FormatError("mixture: weights must be positive");
    if ((int)c.mean.size() != dim || (int)c.scale.size() != dim)
      throw FormatError("mixture: component dimension mismatch");
    for (double s : c.scale)
      if (s < 0) throw FormatError("mixture: scales must be non-negative");
    total += c.weight;
  }
  if (std::fabs(total - 1.0) > 1e-6)
    throw FormatError("mixture: weights sum to " + std::to_string(total) +
                      ", expected 1");
}

MixtureSpec parse_mixture_spec(const std::string& text) {
  MixtureSpec spec;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("mixture: bad line '" + line + "'");
    std::istringstream key_s(line.substr(0, eq));
    std::string key;
    key_s >> key;
    std::istringstream val(line.substr(eq + 1));
    if (key == "dim") {
      val >> spec.dim;
    } else if (key == "seed") {
      val >> spec.seed;
    } else if (key == "component") {
      if (spec.dim < 1)
        throw FormatError("mixture: dim must precede components");
      MixtureComponent c;
      val >> c.weight;
      c.mean.resize(spec.dim);
      c.scale.resize(spec.dim);
      for (double& m : c.mean) val >> m;
      for (double& s : c.scale) val >> s;
      if (!val) throw FormatError("mixture: bad component line '" + line + "'");
      spec.components.push_back(std::move(c));
    } else {
      throw FormatError("mixture: unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

MixtureSpec read_mixture_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("mixture: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_mixture_spec(ss.str());
}

Dataset gen_mixture(const MixtureSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw ShapeError("gen_mixture: n must be >= 1");
  Dataset ds;
  ds.data_shape = {spec.dim};
  ds.normalization = "none";
  ds.box_lo.assign(spec.dim, 1e300);
  ds.box_hi.assign(spec.dim, -1e300);
  for (const auto& c : spec.components)
    for (int d = 0; d < spec.dim; ++d) {
      ds.box_lo[d] = std::min(ds.box_lo[d], c.mean[d] - 4 * c.scale[d]);
      ds.box_hi[d] = std::max(ds.box_hi[d], c.mean[d] + 4 * c.scale[d]);
    }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    double u = unif(rng);
    std::size_t pick = 0;
    for (; pick + 1 < spec.components.size(); ++pick) {
      u -= spec.components[pick].weight;
      if (u < 0) break;
    }
    const auto& c = spec.components[pick];
    std::vector<float> x(spec.dim);
    for (int d = 0; d < spec.dim; ++d) {
      double v = c.mean[d] + c.scale[d] * normal(rng);
      v = std::min(std::max(v, ds.box_lo[d]), ds.box_hi[d]);
      x[d] = (float)v;
    }
    ds.examples.push_back(std::move(x));
  }
  return ds;
}

// ---------------------------------------------------------------------------

long write_image_grid(const std::vector<std::vector<float>>& tiles,
                      const Shape& tile_shape, int rows, int cols,
                      const std::string& path) {
  if (tile_shape.size() != 3 || (tile_shape[0] != 1 && tile_shape[0] != 3))
    throw ShapeError("image grid: tiles must be 1xHxW or 3xHxW, got " +
                     shape_str(tile_shape));
  if ((long)tiles.size() > (long)rows * cols)
    throw ShapeError("image grid: " + std::to_string(tiles.size()) +
                     " tiles exceed " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  const int ch = tile_shape[0], h = tile_shape[1], w = tile_shape[2];
  for (const auto& t : tiles)
    if ((long)t.size() != (long)ch * h * w)
      throw ShapeError("image grid: tile element count mismatch");

  const int gh = rows * h + (rows - 1);
  const int gw = cols * w + (cols - 1);
  // separator and empty cells render mid-gray
  std::vector<std::uint8_t> canvas((std::size_t)gh * gw * ch, 128);
  long clipped = 0;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const int r = (int)t / cols, c = (int)t % cols;
    const int y0 = r * (h + 1), x0 = c * (w + 1);
    for (int cc = 0; cc < ch; ++cc)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float v = tiles[t][(cc * h + y) * w + x];
          if (v < 0.0f || v > 1.0f) {
            ++clipped;
            v = std::min(std::max(v, 0.0f), 1.0f);
          }
          canvas[((std::size_t)(y0 + y) * gw + (x0 + x)) * ch + cc] =
              (std::uint8_t)std::lround(v * 255.0f);
        }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("image grid: cannot open '" + path + "'");
  f << (ch == 1 ? "P5" : "P6") << "\n" << gw << " " << gh << "\n255\n";
  f.write((const char*)canvas.data(), (std::streamsize)canvas.size());
  if (!f) throw FormatError("image grid: write failed for '" + path + "'");
  return clipped;
}

}  // namespace vqdraw
