#include "config.hpp"

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "check.hpp"

namespace weakmap {

namespace {

enum class FieldKind { kInt, kDouble, kU64 };

struct FieldSpec {
  const char* key;
  FieldKind kind;
  size_t offset;
};

#define WM_FIELD(name, kind) {#name, kind, offsetof(RunConfig, name)}

const FieldSpec kFields[] = {
    WM_FIELD(seed, FieldKind::kU64),
    WM_FIELD(n_samples, FieldKind::kInt),
    WM_FIELD(classes, FieldKind::kInt),
    WM_FIELD(image_size, FieldKind::kInt),
    WM_FIELD(class_prior, FieldKind::kDouble),
    WM_FIELD(label_noise, FieldKind::kDouble),
    WM_FIELD(images_per_subject, FieldKind::kInt),
    WM_FIELD(frac_train, FieldKind::kDouble),
    WM_FIELD(frac_val, FieldKind::kDouble),
    WM_FIELD(frac_eval, FieldKind::kDouble),
    WM_FIELD(input_channels, FieldKind::kInt),
    WM_FIELD(stem_channels, FieldKind::kInt),
    WM_FIELD(num_blocks, FieldKind::kInt),
    WM_FIELD(layers_per_block, FieldKind::kInt),
    WM_FIELD(growth, FieldKind::kInt),
    WM_FIELD(compression, FieldKind::kDouble),
    WM_FIELD(se_reduction, FieldKind::kInt),
    WM_FIELD(se, FieldKind::kInt),
    WM_FIELD(maps_per_class, FieldKind::kInt),
    WM_FIELD(k_plus, FieldKind::kInt),
    WM_FIELD(k_minus, FieldKind::kInt),
    WM_FIELD(alpha, FieldKind::kDouble),
    WM_FIELD(batch_size, FieldKind::kInt),
    WM_FIELD(lr0, FieldKind::kDouble),
    WM_FIELD(beta1, FieldKind::kDouble),
    WM_FIELD(beta2, FieldKind::kDouble),
    WM_FIELD(adam_eps, FieldKind::kDouble),
    WM_FIELD(plateau_patience, FieldKind::kInt),
    WM_FIELD(plateau_min_delta, FieldKind::kDouble),
    WM_FIELD(lr_decay_factor, FieldKind::kDouble),
    WM_FIELD(max_epochs, FieldKind::kInt),
    WM_FIELD(crop_size, FieldKind::kInt),
};

#undef WM_FIELD

const FieldSpec* find_field(const std::string& key) {
  for (const auto& f : kFields)
    if (key == f.key) return &f;
  return nullptr;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const FieldSpec* f = find_field(key);
  WM_CHECK(f != nullptr, ErrorCategory::kConfig, "unknown config key '" << key << "'");
  char* base = reinterpret_cast<char*>(this);
  const char* s = value.c_str();
  char* end = nullptr;
  switch (f->kind) {
    case FieldKind::kInt: {
      long long v = std::strtoll(s, &end, 10);
      WM_CHECK(end != s && *end == '\0', ErrorCategory::kConfig,
               "config key '" << key << "' expects an integer, got '" << value << "'");
      *reinterpret_cast<int*>(base + f->offset) = static_cast<int>(v);
      break;
    }
    case FieldKind::kU64: {
      unsigned long long v = std::strtoull(s, &end, 10);
      WM_CHECK(end != s && *end == '\0', ErrorCategory::kConfig,
               "config key '" << key << "' expects an unsigned integer, got '" << value << "'");
      *reinterpret_cast<uint64_t*>(base + f->offset) = static_cast<uint64_t>(v);
      break;
    }
    case FieldKind::kDouble: {
      double v = std::strtod(s, &end);
      WM_CHECK(end != s && *end == '\0', ErrorCategory::kConfig,
               "config key '" << key << "' expects a number, got '" << value << "'");
      *reinterpret_cast<double*>(base + f->offset) = v;
      break;
    }
  }
}

std::string RunConfig::get(const std::string& key) const {
  const FieldSpec* f = find_field(key);
  WM_CHECK(f != nullptr, ErrorCategory::kConfig, "unknown config key '" << key << "'");
  const char* base = reinterpret_cast<const char*>(this);
  switch (f->kind) {
    case FieldKind::kInt:
      return std::to_string(*reinterpret_cast<const int*>(base + f->offset));
    case FieldKind::kU64:
      return std::to_string(*reinterpret_cast<const uint64_t*>(base + f->offset));
    case FieldKind::kDouble:
      return format_double(*reinterpret_cast<const double*>(base + f->offset));
  }
  return "";
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : kFields) out.emplace_back(f.key);
  return out;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& f : kFields) {
    out += f.key;
    out += '=';
    out += get(f.key);
    out += '\n';
  }
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    size_t eq = line.find('=');
    WM_CHECK(eq != std::string::npos, ErrorCategory::kConfig,
             "config line " << lineno << " is not key=value: '" << line << "'");
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = line.substr(eq + 1);
    size_t vs = value.find_first_not_of(" \t");
    value = vs == std::string::npos ? "" : value.substr(vs);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t')) value.pop_back();
    cfg.set(key, value);
  }
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  WM_CHECK(in.good(), ErrorCategory::kIo, "cannot open config file '" << path << "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save_file(const std::string& path) const {
  std::ofstream out(path);
  WM_CHECK(out.good(), ErrorCategory::kIo, "cannot write config file '" << path << "'");
  out << serialize();
  WM_CHECK(out.good(), ErrorCategory::kIo, "failed writing config file '" << path << "'");
}

void RunConfig::validate() const {
  WM_CHECK(n_samples >= 1, ErrorCategory::kConfig, "n_samples must be >= 1");
  WM_CHECK(classes >= 1 && classes <= 8, ErrorCategory::kConfig,
           "classes must be in [1,8], got " << classes << " (8 lesion archetypes available)");
  WM_CHECK(class_prior >= 0.0 && class_prior <= 1.0, ErrorCategory::kConfig,
           "class_prior must be in [0,1]");
  WM_CHECK(label_noise >= 0.0 && label_noise < 1.0, ErrorCategory::kConfig,
           "label_noise must be in [0,1)");
  WM_CHECK(images_per_subject >= 1, ErrorCategory::kConfig, "images_per_subject must be >= 1");
  const double frac_sum = frac_train + frac_val + frac_eval;
  WM_CHECK(frac_train >= 0 && frac_val >= 0 && frac_eval >= 0 && std::abs(frac_sum - 1.0) < 1e-9,
           ErrorCategory::kConfig, "split fractions must be non-negative and sum to 1, got "
                                       << frac_train << "+" << frac_val << "+" << frac_eval);
  WM_CHECK(input_channels == 1 || input_channels == 3, ErrorCategory::kConfig,
           "input_channels must be 1 or 3");
  WM_CHECK(stem_channels >= 1 && num_blocks >= 1 && layers_per_block >= 1 && growth >= 1,
           ErrorCategory::kConfig, "backbone dimensions must be positive");
  WM_CHECK(compression > 0.0 && compression <= 1.0, ErrorCategory::kConfig,
           "compression must be in (0,1]");
  WM_CHECK(se_reduction >= 1, ErrorCategory::kConfig, "se_reduction must be >= 1");
  WM_CHECK(se == 0 || se == 1, ErrorCategory::kConfig, "se must be 0 or 1");
  WM_CHECK(maps_per_class >= 1, ErrorCategory::kConfig, "maps_per_class must be >= 1");
  WM_CHECK(k_plus >= 1 && k_minus >= 0, ErrorCategory::kConfig,
           "k_plus must be >= 1 and k_minus >= 0");
  WM_CHECK(alpha >= 0.0, ErrorCategory::kConfig, "alpha must be >= 0");
  WM_CHECK(batch_size >= 1, ErrorCategory::kConfig, "batch_size must be >= 1");
  WM_CHECK(lr0 > 0.0, ErrorCategory::kConfig, "lr0 must be positive");
  WM_CHECK(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCategory::kConfig,
           "beta1 and beta2 must be in [0,1)");
  WM_CHECK(adam_eps > 0.0, ErrorCategory::kConfig, "adam_eps must be positive");
  WM_CHECK(plateau_patience >= 1, ErrorCategory::kConfig, "plateau_patience must be >= 1");
  WM_CHECK(plateau_min_delta >= 0.0, ErrorCategory::kConfig, "plateau_min_delta must be >= 0");
  WM_CHECK(lr_decay_factor > 0.0 && lr_decay_factor < 1.0, ErrorCategory::kConfig,
           "lr_decay_factor must be in (0,1)");
  WM_CHECK(max_epochs >= 0, ErrorCategory::kConfig, "max_epochs must be >= 0");
  WM_CHECK(crop_size >= 1 && crop_size <= image_size, ErrorCategory::kConfig,
           "crop_size must be in [1, image_size]");
  const int div = backbone_total_stride(backbone());
  WM_CHECK(image_size % div == 0, ErrorCategory::kConfig,
           "image_size " << image_size << " must be divisible by " << div);
  WM_CHECK(crop_size % div == 0, ErrorCategory::kConfig,
           "crop_size " << crop_size << " must be divisible by " << div);
}

BackboneConfig RunConfig::backbone() const {
  BackboneConfig cfg;
  cfg.input_channels = input_channels;
  cfg.stem_channels = stem_channels;
  cfg.num_blocks = num_blocks;
  cfg.layers_per_block = layers_per_block;
  cfg.growth = growth;
  cfg.compression = compression;
  cfg.se_reduction = se_reduction;
  cfg.se_enabled = se != 0;
  return cfg;
}

HeadConfig RunConfig::head() const {
  HeadConfig cfg;
  cfg.maps_per_class = maps_per_class;
  cfg.classes = classes;
  cfg.k_plus = k_plus;
  cfg.k_minus = k_minus;
  cfg.alpha = alpha;
  return cfg;
}

TrainConfig RunConfig::train() const {
  TrainConfig cfg;
  cfg.batch_size = batch_size;
  cfg.lr0 = lr0;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  cfg.adam_eps = adam_eps;
  cfg.plateau_patience = plateau_patience;
  cfg.plateau_min_delta = plateau_min_delta;
  cfg.lr_decay_factor = lr_decay_factor;
  cfg.max_epochs = max_epochs;
  cfg.crop_size = crop_size;
  cfg.seed = seed;
  return cfg;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.serialize() == b.serialize();
}

}  // namespace weakmap
