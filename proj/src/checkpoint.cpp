#include "checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace weakmap {

namespace {

constexpr char kMagic[4] = {'W', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  std::ifstream in;
  std::string path;

  void read_bytes(char* dst, size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    WM_CHECK(in.gcount() == static_cast<std::streamsize>(n), ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "' truncated while reading " << what);
  }
  uint32_t read_u32(const char* what) {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t read_u64(const char* what) {
    unsigned char b[8];
    read_bytes(reinterpret_cast<char*>(b), 8, what);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double read_f64(const char* what) {
    uint64_t bits = read_u64(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

void append_record(std::string& out, const std::string& name, const Shape& shape,
                   const std::vector<double>& values) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<uint32_t>(shape.size()));
  for (int e : shape) put_u32(out, static_cast<uint32_t>(e));
  for (double v : values) put_f64(out, v);
}

struct Target {
  Shape shape;
  std::vector<double>* values;
  bool filled = false;
};

}  // namespace

void save_checkpoint(const std::string& path, Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const std::string cfg = ckpt.config.serialize();
  put_u64(out, cfg.size());
  out += cfg;

  std::vector<std::pair<std::string, std::pair<Shape, const std::vector<double>*>>> records;
  ckpt.params.visit_trainable([&](const std::string& name, Tensor& t) {
    records.emplace_back(name, std::make_pair(t.shape(), &t.values()));
  });
  ckpt.params.visit_buffers([&](const std::string& name, RunningStats& s) {
    records.emplace_back(name + ".running_mean",
                         std::make_pair(Shape{static_cast<int>(s.mean.size())}, &s.mean));
    records.emplace_back(name + ".running_var",
                         std::make_pair(Shape{static_cast<int>(s.var.size())}, &s.var));
  });
  records.emplace_back("normalize.mean",
                       std::make_pair(Shape{static_cast<int>(ckpt.norm_mean.size())},
                                      &ckpt.norm_mean));
  records.emplace_back("normalize.std",
                       std::make_pair(Shape{static_cast<int>(ckpt.norm_std.size())},
                                      &ckpt.norm_std));

  put_u64(out, records.size());
  for (auto& [name, rec] : records) append_record(out, name, rec.first, *rec.second);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    WM_CHECK(f.good(), ErrorCategory::kIo, "cannot write checkpoint '" << tmp << "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    WM_CHECK(f.good(), ErrorCategory::kIo, "failed writing checkpoint '" << tmp << "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  WM_CHECK(!ec, ErrorCategory::kIo,
           "cannot move checkpoint into place at '" << path << "': " << ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  WM_CHECK(r.in.good(), ErrorCategory::kIo, "cannot open checkpoint '" << path << "'");

  char magic[4];
  r.read_bytes(magic, 4, "magic");
  WM_CHECK(std::memcmp(magic, kMagic, 4) == 0, ErrorCategory::kCheckpoint,
           "'" << path << "' is not a checkpoint (bad magic)");
  const uint32_t version = r.read_u32("version");
  WM_CHECK(version == kVersion, ErrorCategory::kCheckpoint,
           "checkpoint '" << path << "' has unsupported version " << version << " (expected "
                          << kVersion << ")");

  const uint64_t cfg_len = r.read_u64("config length");
  WM_CHECK(cfg_len < (1u << 20), ErrorCategory::kCheckpoint,
           "checkpoint '" << path << "' has implausible config length " << cfg_len);
  std::string cfg_text(cfg_len, '\0');
  r.read_bytes(cfg_text.data(), cfg_len, "config");

  Checkpoint ckpt;
  ckpt.config = RunConfig::parse(cfg_text);
  ckpt.config.validate();
  ckpt.params = init_params(ckpt.config.backbone(), ckpt.config.head(), ckpt.config.seed);
  ckpt.norm_mean.assign(static_cast<size_t>(ckpt.config.input_channels), 0.0);
  ckpt.norm_std.assign(static_cast<size_t>(ckpt.config.input_channels), 1.0);

  std::map<std::string, Target> targets;
  ckpt.params.visit_trainable([&](const std::string& name, Tensor& t) {
    targets[name] = Target{t.shape(), &t.values(), false};
  });
  ckpt.params.visit_buffers([&](const std::string& name, RunningStats& s) {
    targets[name + ".running_mean"] =
        Target{Shape{static_cast<int>(s.mean.size())}, &s.mean, false};
    targets[name + ".running_var"] = Target{Shape{static_cast<int>(s.var.size())}, &s.var, false};
  });
  targets["normalize.mean"] =
      Target{Shape{static_cast<int>(ckpt.norm_mean.size())}, &ckpt.norm_mean, false};
  targets["normalize.std"] =
      Target{Shape{static_cast<int>(ckpt.norm_std.size())}, &ckpt.norm_std, false};

  const uint64_t n_records = r.read_u64("record count");
  WM_CHECK(n_records == targets.size(), ErrorCategory::kCheckpoint,
           "checkpoint '" << path << "' has " << n_records << " tensor records, model needs "
                          << targets.size());
  for (uint64_t i = 0; i < n_records; ++i) {
    const uint32_t name_len = r.read_u32("tensor name length");
    WM_CHECK(name_len < 4096, ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "' has implausible tensor name length " << name_len);
    std::string name(name_len, '\0');
    r.read_bytes(name.data(), name_len, "tensor name");
    const uint32_t rank = r.read_u32("tensor rank");
    WM_CHECK(rank <= 8, ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "': tensor '" << name << "' has implausible rank " << rank);
    Shape shape;
    uint64_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t e = r.read_u32("tensor extent");
      shape.push_back(static_cast<int>(e));
      count *= e;
    }
    auto it = targets.find(name);
    WM_CHECK(it != targets.end(), ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "' contains unknown tensor '" << name << "'");
    WM_CHECK(!it->second.filled, ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "' contains tensor '" << name << "' twice");
    WM_CHECK(it->second.shape == shape, ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "': tensor '" << name << "' has shape " << shape_str(shape)
                            << ", model expects " << shape_str(it->second.shape));
    auto& dst = *it->second.values;
    WM_CHECK(dst.size() == count, ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "': tensor '" << name << "' size mismatch");
    for (uint64_t j = 0; j < count; ++j) dst[j] = r.read_f64("tensor values");
    it->second.filled = true;
  }
  for (const auto& [name, target] : targets) {
    WM_CHECK(target.filled, ErrorCategory::kCheckpoint,
             "checkpoint '" << path << "' is missing tensor '" << name << "'");
  }
  return ckpt;
}

}  // namespace weakmap
