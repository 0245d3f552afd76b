#include "vqdraw/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vqdraw/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as raw little-endian f32");

namespace vqdraw {

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'D', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back((char)(v & 0xFF));
  out.push_back((char)(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((char)((v >> (8 * i)) & 0xFF));
}

struct Cursor {
  const std::uint8_t* p;
  std::size_t left;

  void need(std::size_t n) const {
    if (n > left) throw FormatError("checkpoint: truncated file");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = (std::uint16_t)(p[0] | (p[1] << 8));
    p += 2;
    left -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (std::uint32_t)p[i] << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (std::uint64_t)p[i] << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    std::uint8_t v = *p++;
    --left;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s((const char*)p, n);
    p += n;
    left -= n;
    return s;
  }
  std::vector<float> f32(std::size_t n) {
    need(n * 4);
    std::vector<float> out(n);
    std::memcpy(out.data(), p, n * 4);
    p += n * 4;
    left -= n * 4;
    return out;
  }
};

std::string shape_text(const Shape& s) {
  std::ostringstream os;
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " " : "") << s[i];
  return os.str();
}

std::string config_text(const RefinerConfig& rc, const TrainConfig& tc,
                        long step, const std::mt19937_64& rng) {
  std::ostringstream os;
  os.precision(17);
  os << "arch = " << rc.arch << "\n";
  os << "options = " << rc.options << "\n";
  os << "stages = " << rc.stages << "\n";
  os << "stages_per_segment = " << rc.stages_per_segment << "\n";
  os << "data_shape = " << shape_text(rc.data_shape) << "\n";
  os << "hidden = " << rc.hidden << "\n";
  os << "channels = " << rc.channels << "\n";
  os << "res_blocks = " << rc.res_blocks << "\n";
  os << "gn_groups = " << rc.gn_groups << "\n";
  os << "init_seed = " << rc.init_seed << "\n";
  os << "initial_canvas = zeros\n";
  os << "alpha = " << tc.alpha << "\n";
  os << "batch_size = " << tc.batch_size << "\n";
  os << "micro_batch = " << tc.micro_batch << "\n";
  os << "steps = " << tc.steps << "\n";
  os << "lr = " << tc.lr << "\n";
  os << "beta1 = " << tc.beta1 << "\n";
  os << "beta2 = " << tc.beta2 << "\n";
  os << "eps = " << tc.eps << "\n";
  os << "seed = " << tc.seed << "\n";
  os << "step = " << step << "\n";
  os << "rng = " << rng << "\n";
  return os.str();
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

const std::string& want(const std::map<std::string, std::string>& kv,
                        const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw FormatError("checkpoint: config key '" + key + "' missing");
  return it->second;
}

Shape parse_shape(const std::string& s) {
  Shape out;
  std::istringstream is(s);
  int d;
  while (is >> d) out.push_back(d);
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Refiner<float>& refiner,
                     const TrainConfig& train_cfg,
                     const AdamState<float>& adam, long step,
                     const std::mt19937_64& rng) {
  std::string out(kMagic, 4);
  put_u16(out, kVersion);
  const std::string cfg = config_text(refiner.config(), train_cfg, step, rng);
  put_u32(out, (std::uint32_t)cfg.size());
  out += cfg;

  const auto& params = refiner.parameters();
  put_u32(out, (std::uint32_t)params.size());
  for (const auto& p : params) {
    put_u16(out, (std::uint16_t)p.name.size());
    out += p.name;
    out.push_back((char)p.tensor.shape().size());
    for (int d : p.tensor.shape()) put_u32(out, (std::uint32_t)d);
    const auto& v = p.tensor.values();
    out.append((const char*)v.data(), v.size() * 4);
  }

  const bool has_adam = !adam.m.empty();
  out.push_back(has_adam ? 1 : 0);
  if (has_adam) {
    if (adam.m.size() != params.size())
      throw ShapeError("checkpoint: Adam state does not match parameters");
    put_u64(out, (std::uint64_t)adam.step);
    for (size_t i = 0; i < params.size(); ++i) {
      out.append((const char*)adam.m[i].data(), adam.m[i].size() * 4);
      out.append((const char*)adam.v[i].data(), adam.v[i].size() * 4);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open '" + tmp + "'");
    f.write(out.data(), (std::streamsize)out.size());
    if (!f) throw FormatError("checkpoint: write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("checkpoint: rename to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  Cursor c{buf.data(), buf.size()};
  if (c.bytes(4) != std::string(kMagic, 4))
    throw FormatError("checkpoint: bad magic");
  const std::uint16_t ver = c.u16();
  if (ver != kVersion)
    throw FormatError("checkpoint: version " + std::to_string(ver) +
                      ", expected " + std::to_string(kVersion));
  const auto kv = parse_config_text(c.bytes(c.u32()));

  LoadedCheckpoint ck;
  ck.refiner_cfg.arch = want(kv, "arch");
  ck.refiner_cfg.options = std::stoi(want(kv, "options"));
  ck.refiner_cfg.stages = std::stoi(want(kv, "stages"));
  ck.refiner_cfg.stages_per_segment = std::stoi(want(kv, "stages_per_segment"));
  ck.refiner_cfg.data_shape = parse_shape(want(kv, "data_shape"));
  ck.refiner_cfg.hidden = std::stoi(want(kv, "hidden"));
  ck.refiner_cfg.channels = std::stoi(want(kv, "channels"));
  ck.refiner_cfg.res_blocks = std::stoi(want(kv, "res_blocks"));
  ck.refiner_cfg.gn_groups = std::stoi(want(kv, "gn_groups"));
  ck.refiner_cfg.init_seed = std::stoull(want(kv, "init_seed"));
  ck.train_cfg.alpha = std::stod(want(kv, "alpha"));
  ck.train_cfg.batch_size = std::stoi(want(kv, "batch_size"));
  ck.train_cfg.micro_batch = std::stoi(want(kv, "micro_batch"));
  ck.train_cfg.steps = std::stol(want(kv, "steps"));
  ck.train_cfg.lr = std::stod(want(kv, "lr"));
  ck.train_cfg.beta1 = std::stod(want(kv, "beta1"));
  ck.train_cfg.beta2 = std::stod(want(kv, "beta2"));
  ck.train_cfg.eps = std::stod(want(kv, "eps"));
  ck.train_cfg.seed = std::stoull(want(kv, "seed"));
  ck.step = std::stol(want(kv, "step"));
  {
    std::istringstream is(want(kv, "rng"));
    is >> ck.rng;
    if (!is) throw FormatError("checkpoint: bad rng state");
  }

  ck.refiner = build_refiner<float>(ck.refiner_cfg);
  auto& params = ck.refiner->parameters();
  const std::uint32_t n_params = c.u32();
  if (n_params != params.size())
    throw FormatError("checkpoint: " + std::to_string(n_params) +
                      " parameter blobs, config implies " +
                      std::to_string(params.size()));
  for (auto& p : params) {
    const std::string name = c.bytes(c.u16());
    if (name != p.name)
      throw FormatError("checkpoint: parameter '" + name + "', expected '" +
                        p.name + "'");
    Shape shape;
    const int ndim = c.u8();
    for (int i = 0; i < ndim; ++i) shape.push_back((int)c.u32());
    if (shape != p.tensor.shape())
      throw FormatError("checkpoint: parameter '" + name + "' has shape " +
                        shape_str(shape) + ", expected " +
                        shape_str(p.tensor.shape()));
    p.tensor.data() = c.f32(p.tensor.numel());
  }

  if (c.u8()) {
    ck.adam.step = (long)c.u64();
    for (auto& p : params) {
      ck.adam.m.push_back(c.f32(p.tensor.numel()));
      ck.adam.v.push_back(c.f32(p.tensor.numel()));
    }
  }
  if (c.left != 0) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

}  // namespace vqdraw
