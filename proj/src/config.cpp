#include "cardioseg/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

namespace cardioseg {

namespace {

[[noreturn]] void bad(const std::string& source, const std::string& key, const std::string& why) {
  throw UsageError(source + ": " + key + ": " + why);
}

double to_double(const std::string& v, const std::string& src, const std::string& key) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
    bad(src, key, "expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& v, const std::string& src, const std::string& key) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || v.empty())
    bad(src, key, "expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, const std::string& src, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(src, key, "expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, sep)) {
    const auto a = cur.find_first_not_of(' '), b = cur.find_last_not_of(' ');
    out.push_back(a == std::string::npos ? "" : cur.substr(a, b - a + 1));
  }
  return out;
}

std::vector<double> to_doubles(const std::string& v, std::size_t n, char sep, const std::string& src,
                               const std::string& key) {
  auto parts = split(v, sep);
  if (n && parts.size() != n) bad(src, key, "expected " + std::to_string(n) + " values, got '" + v + "'");
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(to_double(p, src, key));
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest form that reads back exactly.
  for (int prec = 1; prec <= 17; ++prec) {
    char s[32];
    std::snprintf(s, sizeof s, "%.*g", prec, v);
    if (std::strtod(s, nullptr) == v) return s;
  }
  return buf;
}

std::string join(const std::vector<double>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + num(v[i]);
  return out;
}

struct Field {
  std::string help;
  std::function<void(RunConfig&, const std::string&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Field>& schema() {
  using S = const std::string&;
  static const std::map<std::string, Field> fields = {
      {"model.dims", {"2 or 3", [](RunConfig& c, S v, S s, S k) { c.train.model.dims = int(to_uint(v, s, k)); },
                      [](const RunConfig& c) { return std::to_string(c.train.model.dims); }}},
      {"model.slices", {"stacked input slices for 2-D models (1, 3 or 5)",
                        [](RunConfig& c, S v, S s, S k) { c.train.model.in_channels = to_uint(v, s, k); },
                        [](const RunConfig& c) { return std::to_string(c.train.model.in_channels); }}},
      {"model.num_classes", {"output classes",
                             [](RunConfig& c, S v, S s, S k) { c.train.model.num_classes = to_uint(v, s, k); },
                             [](const RunConfig& c) { return std::to_string(c.train.model.num_classes); }}},
      {"model.base_width", {"feature maps at the first level",
                            [](RunConfig& c, S v, S s, S k) { c.train.model.base_width = to_uint(v, s, k); },
                            [](const RunConfig& c) { return std::to_string(c.train.model.base_width); }}},
      {"model.depth", {"pooling levels", [](RunConfig& c, S v, S s, S k) { c.train.model.depth = to_uint(v, s, k); },
                       [](const RunConfig& c) { return std::to_string(c.train.model.depth); }}},
      {"model.max_width", {"feature map cap, 0 for none",
                           [](RunConfig& c, S v, S s, S k) { c.train.model.max_width = to_uint(v, s, k); },
                           [](const RunConfig& c) { return std::to_string(c.train.model.max_width); }}},
      {"model.dropout_last", {"dropout after the last encoder level",
                              [](RunConfig& c, S v, S s, S k) { c.train.model.dropout_last = to_double(v, s, k); },
                              [](const RunConfig& c) { return num(c.train.model.dropout_last); }}},
      {"model.dropout_second_last",
       {"dropout after the second-last encoder level",
        [](RunConfig& c, S v, S s, S k) { c.train.model.dropout_second_last = to_double(v, s, k); },
        [](const RunConfig& c) { return num(c.train.model.dropout_second_last); }}},

      {"train.momentum", {"SGD momentum", [](RunConfig& c, S v, S s, S k) { c.train.momentum = to_double(v, s, k); },
                          [](const RunConfig& c) { return num(c.train.momentum); }}},
      {"train.lr", {"initial learning rate", [](RunConfig& c, S v, S s, S k) { c.train.initial_lr = to_double(v, s, k); },
                    [](const RunConfig& c) { return num(c.train.initial_lr); }}},
      {"train.lr_decay_factor", {"learning-rate divisor per step",
                                 [](RunConfig& c, S v, S s, S k) { c.train.lr_decay_factor = to_double(v, s, k); },
                                 [](const RunConfig& c) { return num(c.train.lr_decay_factor); }}},
      {"train.lr_decay_every", {"epochs between learning-rate steps",
                                [](RunConfig& c, S v, S s, S k) { c.train.lr_decay_every = to_uint(v, s, k); },
                                [](const RunConfig& c) { return std::to_string(c.train.lr_decay_every); }}},
      {"train.epochs", {"training epochs", [](RunConfig& c, S v, S s, S k) { c.train.epochs = to_uint(v, s, k); },
                        [](const RunConfig& c) { return std::to_string(c.train.epochs); }}},
      {"train.batch_size", {"samples per step",
                            [](RunConfig& c, S v, S s, S k) { c.train.batch_size = to_uint(v, s, k); },
                            [](const RunConfig& c) { return std::to_string(c.train.batch_size); }}},
      {"train.folds", {"cross-validation folds", [](RunConfig& c, S v, S s, S k) { c.train.folds = to_uint(v, s, k); },
                       [](const RunConfig& c) { return std::to_string(c.train.folds); }}},
      {"train.fold", {"fold to train, 0-based", [](RunConfig& c, S v, S s, S k) { c.train.fold = to_uint(v, s, k); },
                      [](const RunConfig& c) { return std::to_string(c.train.fold); }}},
      {"train.seed", {"random seed", [](RunConfig& c, S v, S s, S k) { c.train.seed = to_uint(v, s, k); },
                      [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
      {"train.loss", {"ce, dice or dice_ce",
                      [](RunConfig& c, S v, S s, S k) {
                        try {
                          c.train.loss = parse_loss_kind(v);
                        } catch (const ParameterError&) {
                          bad(s, k, "expected ce, dice or dice_ce, got '" + v + "'");
                        }
                      },
                      [](const RunConfig& c) { return to_string(c.train.loss); }}},
      {"train.class_weights", {"uniform, auto, or one weight per class separated by commas",
                               [](RunConfig& c, S v, S s, S k) {
                                 if (v != "uniform" && v != "auto") to_doubles(v, 0, ',', s, k);
                                 c.train.class_weights = v;
                               },
                               [](const RunConfig& c) { return c.train.class_weights; }}},
      {"train.grad_clip", {"gradient norm cap, 0 for none",
                           [](RunConfig& c, S v, S s, S k) { c.train.grad_clip = to_double(v, s, k); },
                           [](const RunConfig& c) { return num(c.train.grad_clip); }}},
      {"train.max_steps", {"stop after this many steps, 0 for no limit",
                           [](RunConfig& c, S v, S s, S k) { c.train.max_steps = to_uint(v, s, k); },
                           [](const RunConfig& c) { return std::to_string(c.train.max_steps); }}},

      {"loss.lambda_ce", {"cross-entropy weight in dice_ce",
                          [](RunConfig& c, S v, S s, S k) { c.train.loss_cfg.lambda_ce = to_double(v, s, k); },
                          [](const RunConfig& c) { return num(c.train.loss_cfg.lambda_ce); }}},
      {"loss.lambda_dice", {"dice weight in dice_ce",
                            [](RunConfig& c, S v, S s, S k) { c.train.loss_cfg.lambda_dice = to_double(v, s, k); },
                            [](const RunConfig& c) { return num(c.train.loss_cfg.lambda_dice); }}},
      {"loss.epsilon", {"dice smoothing term",
                        [](RunConfig& c, S v, S s, S k) { c.train.loss_cfg.epsilon = to_double(v, s, k); },
                        [](const RunConfig& c) { return num(c.train.loss_cfg.epsilon); }}},
      {"loss.dice_factor", {"dice numerator factor (1 or 2)",
                            [](RunConfig& c, S v, S s, S k) {
                              c.train.loss_cfg.dice_numerator_factor = int(to_uint(v, s, k));
                            },
                            [](const RunConfig& c) { return std::to_string(c.train.loss_cfg.dice_numerator_factor); }}},
      {"loss.include_background", {"count the background class in the dice loss",
                                   [](RunConfig& c, S v, S s, S k) {
                                     c.train.loss_cfg.dice_include_background = to_bool(v, s, k);
                                   },
                                   [](const RunConfig& c) {
                                     return std::string(c.train.loss_cfg.dice_include_background ? "true" : "false");
                                   }}},

      {"preprocess.spacing", {"target spacing z,y,x in mm",
                              [](RunConfig& c, S v, S s, S k) {
                                auto d = to_doubles(v, 3, ',', s, k);
                                c.preprocess.target_spacing = {d[0], d[1], d[2]};
                              },
                              [](const RunConfig& c) {
                                const auto& t = c.preprocess.target_spacing;
                                return join({t.z, t.y, t.x}, ',');
                              }}},
      {"preprocess.percentiles", {"normalization percentiles lo,hi",
                                  [](RunConfig& c, S v, S s, S k) {
                                    auto d = to_doubles(v, 2, ',', s, k);
                                    c.preprocess.pct_lo = d[0];
                                    c.preprocess.pct_hi = d[1];
                                  },
                                  [](const RunConfig& c) { return join({c.preprocess.pct_lo, c.preprocess.pct_hi}, ','); }}},
      {"preprocess.clip", {"intensity clip range lo,hi",
                           [](RunConfig& c, S v, S s, S k) {
                             auto d = to_doubles(v, 2, ',', s, k);
                             c.preprocess.clip_lo = d[0];
                             c.preprocess.clip_hi = d[1];
                           },
                           [](const RunConfig& c) { return join({c.preprocess.clip_lo, c.preprocess.clip_hi}, ','); }}},
      {"preprocess.size", {"in-plane size HxW",
                           [](RunConfig& c, S v, S s, S k) {
                             auto d = split(v, 'x');
                             if (d.size() != 2) bad(s, k, "expected HxW, got '" + v + "'");
                             c.preprocess.height = to_uint(d[0], s, k);
                             c.preprocess.width = to_uint(d[1], s, k);
                           },
                           [](const RunConfig& c) {
                             return std::to_string(c.preprocess.height) + "x" + std::to_string(c.preprocess.width);
                           }}},
      {"preprocess.depth_3d", {"slices per 3-D training volume",
                               [](RunConfig& c, S v, S s, S k) { c.preprocess.train_depth = to_uint(v, s, k); },
                               [](const RunConfig& c) { return std::to_string(c.preprocess.train_depth); }}},
      {"preprocess.clahe", {"apply CLAHE", [](RunConfig& c, S v, S s, S k) { c.preprocess.use_clahe = to_bool(v, s, k); },
                            [](const RunConfig& c) { return std::string(c.preprocess.use_clahe ? "true" : "false"); }}},
      {"preprocess.clahe_bins", {"CLAHE histogram bins",
                                 [](RunConfig& c, S v, S s, S k) { c.preprocess.clahe.bins = to_uint(v, s, k); },
                                 [](const RunConfig& c) { return std::to_string(c.preprocess.clahe.bins); }}},
      {"preprocess.clahe_tiles", {"CLAHE tile grid YxX",
                                  [](RunConfig& c, S v, S s, S k) {
                                    auto d = split(v, 'x');
                                    if (d.size() != 2) bad(s, k, "expected YxX, got '" + v + "'");
                                    c.preprocess.clahe.tiles_y = to_uint(d[0], s, k);
                                    c.preprocess.clahe.tiles_x = to_uint(d[1], s, k);
                                  },
                                  [](const RunConfig& c) {
                                    return std::to_string(c.preprocess.clahe.tiles_y) + "x" +
                                           std::to_string(c.preprocess.clahe.tiles_x);
                                  }}},
      {"preprocess.clahe_clip", {"CLAHE clip limit as a fraction of tile pixels",
                                 [](RunConfig& c, S v, S s, S k) { c.preprocess.clahe.clip_limit = to_double(v, s, k); },
                                 [](const RunConfig& c) { return num(c.preprocess.clahe.clip_limit); }}},

      {"augment.enabled", {"on-the-fly rotation and scaling",
                           [](RunConfig& c, S v, S s, S k) { c.train.augment.enabled = to_bool(v, s, k); },
                           [](const RunConfig& c) { return std::string(c.train.augment.enabled ? "true" : "false"); }}},
      {"augment.rotation", {"maximum rotation in degrees",
                            [](RunConfig& c, S v, S s, S k) { c.train.augment.max_rotation_deg = to_double(v, s, k); },
                            [](const RunConfig& c) { return num(c.train.augment.max_rotation_deg); }}},
      {"augment.scale", {"scale range lo,hi",
                         [](RunConfig& c, S v, S s, S k) {
                           auto d = to_doubles(v, 2, ',', s, k);
                           c.train.augment.min_scale = d[0];
                           c.train.augment.max_scale = d[1];
                         },
                         [](const RunConfig& c) { return join({c.train.augment.min_scale, c.train.augment.max_scale}, ','); }}},
      {"augment.probability", {"chance of augmenting a sample",
                               [](RunConfig& c, S v, S s, S k) { c.train.augment.probability = to_double(v, s, k); },
                               [](const RunConfig& c) { return num(c.train.augment.probability); }}},
  };
  return fields;
}

}  // namespace

RunConfig RunConfig::defaults(int dims) {
  RunConfig c;
  c.train = TrainConfig::defaults(dims);
  return c;
}

void RunConfig::apply(const KeyValues& kv, const std::string& source) {
  const auto& fields = schema();
  for (const auto& [key, value] : kv) {
    auto it = fields.find(key);
    if (it == fields.end()) throw UsageError(source + ": unknown key '" + key + "'");
    it->second.set(*this, value, source, key);
  }
}

KeyValues RunConfig::to_key_values() const {
  KeyValues out;
  for (const auto& [key, f] : schema()) out.emplace_back(key, f.get(*this));
  return out;
}

void RunConfig::validate() const {
  try {
    train.validate();
    preprocess.validate();
  } catch (const ParameterError& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  const std::size_t m = train.model.spatial_multiple();
  if (preprocess.height % m || preprocess.width % m)
    throw UsageError("invalid configuration: preprocess.size must be a multiple of " + std::to_string(m));
}

RunConfig build_run_config(const std::vector<std::pair<KeyValues, std::string>>& sources) {
  int dims = 2;
  for (const auto& [kv, src] : sources)
    if (const auto* v = find_value(kv, "model.dims")) {
      if (*v != "2" && *v != "3") throw UsageError(src + ": model.dims must be 2 or 3");
      dims = *v == "2" ? 2 : 3;
    }
  RunConfig c = RunConfig::defaults(dims);
  for (const auto& [kv, src] : sources) c.apply(kv, src);
  c.validate();
  return c;
}

std::filesystem::path meta_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".meta");
}

void write_checkpoint_meta(const std::filesystem::path& checkpoint, const RunConfig& config, std::size_t fold,
                           std::size_t epoch, double val_dice) {
  KeyValues kv = config.to_key_values();
  kv.emplace_back("checkpoint.fold", std::to_string(fold));
  kv.emplace_back("checkpoint.epoch", std::to_string(epoch));
  kv.emplace_back("checkpoint.val_dice", num(val_dice));
  std::ofstream out(meta_path(checkpoint));
  out << format_key_values(kv);
  if (!out) throw IoError("cannot write " + meta_path(checkpoint).string());
}

RunConfig read_checkpoint_meta(const std::filesystem::path& checkpoint) {
  const auto path = meta_path(checkpoint);
  if (!std::filesystem::exists(path)) throw CompatibilityError("checkpoint settings file " + path.string() + " is missing");
  KeyValues kv;
  for (auto& [k, v] : read_key_values(path))
    if (k.rfind("checkpoint.", 0) != 0) kv.emplace_back(k, v);
  try {
    return build_run_config({{kv, path.string()}});
  } catch (const UsageError& e) {
    throw CompatibilityError(e.what());
  }
}

std::vector<std::pair<std::string, std::string>> config_schema() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, f] : schema()) out.emplace_back(k, f.help);
  return out;
}

}  // namespace cardioseg
