#include "tessera/config_io.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace tessera {

using json = nlohmann::ordered_json;

ConfigError::ConfigError(const std::string& message, std::string key, std::vector<std::string> suggestions)
    : std::invalid_argument(message), key_(std::move(key)), suggestions_(std::move(suggestions)) {}

namespace {

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void type_error(const std::string& key, const char* expected, const json& v) {
  throw ConfigError(key + ": expected " + expected + ", got " + v.dump(), key);
}

std::int64_t as_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) type_error(key, "an integer", v);
  return v.get<std::int64_t>();
}

double as_number(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number", v);
  return v.get<double>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string", v);
  return v.get<std::string>();
}

template <typename Enum, typename Parse>
Enum as_enum(const std::string& key, const json& v, Parse parse) {
  try {
    return parse(as_string(key, v));
  } catch (const std::invalid_argument& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(key + ": " + e.what(), key);
  }
}

// Accessors take the mutable config; const access goes through const_cast.
template <typename T>
using Ref = std::function<T&(RunConfig&)>;

RunConfig& mut(const RunConfig& c) { return const_cast<RunConfig&>(c); }

Field int_field(std::string key, Ref<std::int64_t> ref) {
  return {key, [ref](const RunConfig& c) { return json(ref(mut(c))); },
          [ref, key](RunConfig& c, const json& v) { ref(c) = as_int(key, v); }};
}

Field seed_field(std::string key, Ref<std::uint64_t> ref) {
  return {key, [ref](const RunConfig& c) { return json(ref(mut(c))); },
          [ref, key](RunConfig& c, const json& v) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
              type_error(key, "a non-negative integer", v);
            }
            ref(c) = v.get<std::uint64_t>();
          }};
}

Field float_field(std::string key, Ref<float> ref) {
  return {key, [ref](const RunConfig& c) { return json(static_cast<double>(ref(mut(c)))); },
          [ref, key](RunConfig& c, const json& v) { ref(c) = static_cast<float>(as_number(key, v)); }};
}

Field double_field(std::string key, Ref<double> ref) {
  return {key, [ref](const RunConfig& c) { return json(ref(mut(c))); },
          [ref, key](RunConfig& c, const json& v) { ref(c) = as_number(key, v); }};
}

Field bool_field(std::string key, Ref<bool> ref) {
  return {key, [ref](const RunConfig& c) { return json(ref(mut(c))); },
          [ref, key](RunConfig& c, const json& v) {
            if (!v.is_boolean()) type_error(key, "true or false", v);
            ref(c) = v.get<bool>();
          }};
}

Field string_field(std::string key, Ref<std::string> ref) {
  return {key, [ref](const RunConfig& c) { return json(ref(mut(c))); },
          [ref, key](RunConfig& c, const json& v) { ref(c) = as_string(key, v); }};
}

Field int_list_field(std::string key, Ref<std::vector<std::int64_t>> ref) {
  return {key, [ref](const RunConfig& c) { return json(ref(mut(c))); },
          [ref, key](RunConfig& c, const json& v) {
            if (!v.is_array()) type_error(key, "an integer array", v);
            std::vector<std::int64_t> out;
            for (const auto& e : v) out.push_back(as_int(key, e));
            ref(c) = std::move(out);
          }};
}

void apply_backbone(RunConfig& c, const std::string& key, const json& v) {
  const std::string name = as_string(key, v);
  EncoderConfig preset;
  try {
    preset = encoder_preset(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what(), key);
  }
  auto& enc = c.model.encoder;
  enc.backbone = preset.backbone;
  enc.embed_dim = preset.embed_dim;
  enc.stage_depths = preset.stage_depths;
  enc.num_heads = preset.num_heads;
  enc.window_size = preset.window_size;
}

std::vector<Field> build_schema() {
  std::vector<Field> f;
#define TESSERA_REF(type, expr) Ref<type>([](RunConfig& c) -> type& { return expr; })
  f.push_back({"encoder.backbone", [](const RunConfig& c) { return json(c.model.encoder.backbone); },
               [](RunConfig& c, const json& v) { apply_backbone(c, "encoder.backbone", v); }});
  f.push_back(int_field("encoder.patch_size", TESSERA_REF(std::int64_t, c.model.encoder.patch_size)));
  f.push_back(int_field("encoder.in_channels", TESSERA_REF(std::int64_t, c.model.encoder.in_channels)));
  f.push_back(int_field("encoder.embed_dim", TESSERA_REF(std::int64_t, c.model.encoder.embed_dim)));
  f.push_back(int_list_field("encoder.stage_depths", TESSERA_REF(std::vector<std::int64_t>, c.model.encoder.stage_depths)));
  f.push_back(int_list_field("encoder.num_heads", TESSERA_REF(std::vector<std::int64_t>, c.model.encoder.num_heads)));
  f.push_back(int_field("encoder.window_size", TESSERA_REF(std::int64_t, c.model.encoder.window_size)));
  f.push_back(int_field("encoder.embed_stride", TESSERA_REF(std::int64_t, c.model.encoder.embed_stride)));
  f.push_back(int_field("encoder.mini_batch_size", TESSERA_REF(std::int64_t, c.model.encoder.mini_batch_size)));
  f.push_back(float_field("encoder.mlp_ratio", TESSERA_REF(float, c.model.encoder.mlp_ratio)));

  f.push_back(int_field("bottleneck.depth", TESSERA_REF(std::int64_t, c.model.bottleneck.depth)));
  f.push_back(int_field("bottleneck.num_heads", TESSERA_REF(std::int64_t, c.model.bottleneck.num_heads)));
  f.push_back(int_field("bottleneck.token_dim", TESSERA_REF(std::int64_t, c.model.bottleneck.token_dim)));
  f.push_back({"bottleneck.attention_mode",
               [](const RunConfig& c) { return json(to_string(c.model.bottleneck.attention_mode)); },
               [](RunConfig& c, const json& v) {
                 c.model.bottleneck.attention_mode =
                     as_enum<AttentionMode>("bottleneck.attention_mode", v, attention_mode_from_string);
               }});
  f.push_back(int_field("bottleneck.approx.hash_buckets", TESSERA_REF(std::int64_t, c.model.bottleneck.approx.hash_buckets)));
  f.push_back(int_field("bottleneck.approx.block_size", TESSERA_REF(std::int64_t, c.model.bottleneck.approx.block_size)));
  f.push_back(int_field("bottleneck.approx.low_rank", TESSERA_REF(std::int64_t, c.model.bottleneck.approx.low_rank)));
  f.push_back(int_field("bottleneck.approx.routed_blocks", TESSERA_REF(std::int64_t, c.model.bottleneck.approx.routed_blocks)));
  f.push_back(float_field("bottleneck.approx.moment_clip", TESSERA_REF(float, c.model.bottleneck.approx.moment_clip)));
  f.push_back(seed_field("bottleneck.approx.seed", TESSERA_REF(std::uint64_t, c.model.bottleneck.approx.seed)));
  f.push_back(string_field("bottleneck.positional_embedding", TESSERA_REF(std::string, c.model.bottleneck.positional_embedding)));
  f.push_back(int_field("bottleneck.max_grid", TESSERA_REF(std::int64_t, c.model.bottleneck.max_grid)));
  f.push_back(float_field("bottleneck.ffn_ratio", TESSERA_REF(float, c.model.bottleneck.ffn_ratio)));
  f.push_back(int_field("bottleneck.token_chunk", TESSERA_REF(std::int64_t, c.model.bottleneck.token_chunk)));
  f.push_back(int_field("bottleneck.attention_chunk", TESSERA_REF(std::int64_t, c.model.bottleneck.attention_chunk)));

  f.push_back(string_field("decoder.upsample_kind", TESSERA_REF(std::string, c.model.decoder.upsample_kind)));
  f.push_back(int_field("decoder.mini_batch_size", TESSERA_REF(std::int64_t, c.model.decoder.mini_batch_size)));
  f.push_back(int_list_field("decoder.stage_depths", TESSERA_REF(std::vector<std::int64_t>, c.model.decoder.stage_depths)));
  f.push_back(int_field("decoder.head_channels", TESSERA_REF(std::int64_t, c.model.decoder.head_channels)));
  f.push_back(int_field("decoder.out_channels", TESSERA_REF(std::int64_t, c.model.decoder.out_channels)));

  f.push_back({"precision", [](const RunConfig& c) { return json(std::string(to_string(c.model.precision))); },
               [](RunConfig& c, const json& v) { c.model.precision = as_enum<DType>("precision", v, dtype_from_string); }});
  f.push_back(seed_field("seed", TESSERA_REF(std::uint64_t, c.model.seed)));

  f.push_back(int_field("train.crop_size", TESSERA_REF(std::int64_t, c.train.crop_size)));
  f.push_back(int_field("train.batch_size", TESSERA_REF(std::int64_t, c.train.batch_size)));
  f.push_back(int_field("train.epochs", TESSERA_REF(std::int64_t, c.train.epochs)));
  f.push_back(int_field("train.max_steps", TESSERA_REF(std::int64_t, c.train.max_steps)));
  f.push_back(double_field("train.lr_init", TESSERA_REF(double, c.train.lr_init)));
  f.push_back(double_field("train.lr_min", TESSERA_REF(double, c.train.lr_min)));
  f.push_back(double_field("train.beta1", TESSERA_REF(double, c.train.beta1)));
  f.push_back(double_field("train.beta2", TESSERA_REF(double, c.train.beta2)));
  f.push_back(double_field("train.adam_eps", TESSERA_REF(double, c.train.adam_eps)));
  f.push_back(bool_field("train.augment_rotation", TESSERA_REF(bool, c.train.augment_rotation)));
  f.push_back(seed_field("train.seed", TESSERA_REF(std::uint64_t, c.train.seed)));
  f.push_back(string_field("train.out_dir", TESSERA_REF(std::string, c.train.out_dir)));

  f.push_back(float_field("synth.coverage_min", TESSERA_REF(float, c.synth.haze.coverage_min)));
  f.push_back(float_field("synth.coverage_max", TESSERA_REF(float, c.synth.haze.coverage_max)));
  f.push_back(float_field("synth.intensity_min", TESSERA_REF(float, c.synth.haze.intensity_min)));
  f.push_back(float_field("synth.intensity_max", TESSERA_REF(float, c.synth.haze.intensity_max)));
  f.push_back(float_field("synth.airlight_min", TESSERA_REF(float, c.synth.haze.airlight_min)));
  f.push_back(float_field("synth.airlight_max", TESSERA_REF(float, c.synth.haze.airlight_max)));
  f.push_back(float_field("synth.airlight_jitter", TESSERA_REF(float, c.synth.haze.airlight_jitter)));
  f.push_back(float_field("synth.t_min", TESSERA_REF(float, c.synth.haze.t_min)));
  f.push_back(double_field("synth.split_ratio", TESSERA_REF(double, c.synth.split_ratio)));
  f.push_back(seed_field("synth.seed", TESSERA_REF(std::uint64_t, c.synth.seed)));
  f.push_back({"synth.bit_depth", [](const RunConfig& c) { return json(c.synth.bit_depth); },
               [](RunConfig& c, const json& v) {
                 const auto b = as_int("synth.bit_depth", v);
                 if (b != 8 && b != 16) throw ConfigError("synth.bit_depth: must be 8 or 16", "synth.bit_depth");
                 c.synth.bit_depth = static_cast<int>(b);
               }});

  f.push_back(int_field("attribute.steps", TESSERA_REF(std::int64_t, c.attribute.steps)));
  f.push_back({"attribute.step_weighting", [](const RunConfig& c) { return json(to_string(c.attribute.weighting)); },
               [](RunConfig& c, const json& v) {
                 c.attribute.weighting = as_enum<StepWeighting>("attribute.step_weighting", v, step_weighting_from_string);
               }});
  f.push_back({"attribute.channel_mode", [](const RunConfig& c) { return json(to_string(c.attribute.channel_mode)); },
               [](RunConfig& c, const json& v) {
                 c.attribute.channel_mode = as_enum<ChannelMode>("attribute.channel_mode", v, channel_mode_from_string);
               }});
  f.push_back(double_field("attribute.detector_weight", TESSERA_REF(double, c.attribute.detector_weight)));
#undef TESSERA_REF
  return f;
}

const std::vector<Field>& schema() {
  static const std::vector<Field> s = build_schema();
  return s;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : schema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void set_json(RunConfig& cfg, const std::string& key, const json& value) {
  const Field* f = find_field(key);
  if (!f) {
    auto near = nearest_keys(key);
    std::string msg = "unknown config key '" + key + "'";
    if (!near.empty()) {
      msg += "; nearest valid keys:";
      for (const auto& k : near) msg += " " + k;
    }
    throw ConfigError(msg, key, std::move(near));
  }
  f->set(cfg, value);
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

void apply_items(RunConfig& cfg, const std::vector<std::pair<std::string, json>>& items) {
  for (const auto& [k, v] : items) {
    if (k == "encoder.backbone") set_json(cfg, k, v);
  }
  for (const auto& [k, v] : items) {
    if (k != "encoder.backbone") set_json(cfg, k, v);
  }
}

json to_flat_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& f : schema()) j[f.key] = f.get(cfg);
  return j;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : schema()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::vector<std::string> nearest_keys(const std::string& key, std::size_t count) {
  std::vector<std::pair<std::size_t, std::string>> scored;
  for (const auto& k : config_keys()) scored.emplace_back(edit_distance(key, k), k);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scored.size() && i < count; ++i) out.push_back(scored[i].second);
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  set_json(cfg, key, parse_value(value));
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(origin + ": expected a JSON object of key/value pairs");
  std::vector<std::pair<std::string, json>> items;
  for (auto it = doc.begin(); it != doc.end(); ++it) items.emplace_back(it.key(), it.value());
  apply_items(cfg, items);
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, json>> items;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not of the form key=value");
    items.emplace_back(o.substr(0, eq), parse_value(o.substr(eq + 1)));
  }
  apply_items(cfg, items);
}

std::string config_to_json(const RunConfig& cfg, int indent) { return to_flat_json(cfg).dump(indent); }

std::string model_config_to_json(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  const json all = to_flat_json(cfg);
  json j = json::object();
  for (auto it = all.begin(); it != all.end(); ++it) {
    const std::string& k = it.key();
    if (k.rfind("train.", 0) == 0 || k.rfind("synth.", 0) == 0 || k.rfind("attribute.", 0) == 0) continue;
    j[k] = it.value();
  }
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  RunConfig cfg;
  apply_config_text(cfg, text, "model config");
  return cfg.model;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = to_flat_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace tessera
