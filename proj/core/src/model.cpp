#include "tessera/model.hpp"

#include <cstring>

#include "tessera/ops.hpp"
#include "tessera/tiling.hpp"

namespace tessera {

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.bottleneck.token_dim == 0) c.bottleneck.token_dim = c.encoder.token_dim();
  return c;
}

std::vector<std::string> validate_config(const ModelConfig& raw) {
  const ModelConfig c = raw.resolved();
  std::vector<std::string> v;
  for (auto& s : validate_config(c.encoder)) v.push_back("encoder." + s);
  if (!v.empty()) return v;
  for (auto& s : validate_config(c.bottleneck)) v.push_back(s);
  for (auto& s : validate_config(c.decoder, c.encoder)) v.push_back(s);
  if (c.bottleneck.token_dim != c.encoder.token_dim()) {
    v.push_back("bottleneck.token_dim: " + std::to_string(c.bottleneck.token_dim) + " differs from encoder token dim " +
                std::to_string(c.encoder.token_dim()));
  }
  if (c.decoder.out_channels != c.encoder.in_channels) {
    v.push_back("decoder.out_channels: must equal encoder.in_channels");
  }
  return v;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.encoder.backbone = "swin_t";
  c.encoder.patch_size = 64;
  c.encoder.embed_dim = 16;
  c.encoder.stage_depths = {1, 1, 1};
  c.encoder.num_heads = {1, 2, 4};
  c.encoder.window_size = 4;
  c.encoder.embed_stride = 4;
  c.encoder.mini_batch_size = 16;
  c.bottleneck.depth = 2;
  c.bottleneck.num_heads = 4;
  c.bottleneck.token_dim = 0;
  c.bottleneck.attention_mode = AttentionMode::exact;
  c.decoder.mini_batch_size = 16;
  c.decoder.head_channels = 16;
  return c.resolved();
}

StageOutOfMemory::StageOutOfMemory(std::string stage, std::int64_t tokens, const OutOfMemory& cause)
    : std::runtime_error("out of device memory in stage '" + stage + "' at " + std::to_string(tokens) +
                         " tokens: " + cause.what()),
      stage_(std::move(stage)),
      tokens_(tokens),
      requested_(cause.requested()),
      budget_(cause.budget()) {}

namespace {

ModelConfig checked(const ModelConfig& raw) {
  const ModelConfig cfg = raw.resolved();
  const auto v = validate_config(cfg);
  if (!v.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

struct Rngs {
  explicit Rngs(std::uint64_t seed)
      : encoder(Rng::derive(seed, {1})), bottleneck(Rng::derive(seed, {2})), decoder(Rng::derive(seed, {3})) {}
  Rng encoder, bottleneck, decoder;
};

}  // namespace

DehazeModel::DehazeModel(const ModelConfig& raw) : cfg_(checked(raw)) {
  Rngs rngs(cfg_.seed);
  PrecisionGuard fp32(DType::f32);
  encoder_ = Encoder(cfg_.encoder, rngs.encoder);
  bottleneck_ = Bottleneck(cfg_.bottleneck, cfg_.encoder.token_spatial(), rngs.bottleneck);
  decoder_ = Decoder(cfg_.encoder, cfg_.decoder, rngs.decoder);
  if (cfg_.precision != DType::f32) set_precision(cfg_.precision);
}

nn::ParamRefs DehazeModel::parameters() {
  nn::ParamRefs refs;
  encoder_.params("encoder", refs);
  bottleneck_.params("bottleneck", refs);
  decoder_.params("decoder", refs);
  return refs;
}

DehazeModel DehazeModel::clone() const {
  ModelConfig fp32 = cfg_;
  fp32.precision = DType::f32;
  DehazeModel copy(fp32);
  auto dst = copy.parameters();
  auto src = const_cast<DehazeModel*>(this)->parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    PrecisionGuard guard(src[i].second->dtype());
    Tensor t = Tensor::from_data(src[i].second->shape(), {src[i].second->values().begin(), src[i].second->values().end()});
    t.set_requires_grad();
    *dst[i].second = t;
  }
  copy.cfg_.precision = cfg_.precision;
  return copy;
}

void DehazeModel::set_precision(DType precision) {
  PrecisionGuard guard(precision);
  for (auto& [name, t] : parameters()) {
    Tensor converted = Tensor::from_data(t->shape(), {t->values().begin(), t->values().end()});
    converted.set_requires_grad();
    *t = converted;
  }
  cfg_.precision = precision;
}

Tensor DehazeModel::forward(const Tensor& image, const RuntimeOptions& opts) const {
  if (image.rank() != 3 || image.size(2) != cfg_.encoder.in_channels) {
    throw std::invalid_argument("model expects [H, W, " + std::to_string(cfg_.encoder.in_channels) + "] input, got " +
                                to_string(image.shape()));
  }
  PrecisionGuard precision(cfg_.precision);
  auto& tracker = MemoryTracker::instance();
  std::int64_t tokens = 0;
  std::string stage;
  auto t0 = std::chrono::steady_clock::now();
  auto begin = [&](const char* name) {
    stage = name;
    tracker.reset_peak(Domain::device);
    tracker.reset_peak(Domain::host);
    t0 = std::chrono::steady_clock::now();
  };
  auto end = [&]() {
    if (!opts.on_stage) return;
    StageReport r;
    r.stage = stage;
    r.device_peak = tracker.stats(Domain::device).peak;
    r.host_peak = tracker.stats(Domain::host).peak;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    opts.on_stage(r);
  };

  try {
    begin("partition");
    const TileLayout layout = plan_tiles(image.size(0), image.size(1), cfg_.encoder.patch_size);
    PatchBatch batch;
    batch.layout = layout;
    {
      DomainGuard host(Domain::host);
      batch.patches = partition(image, layout);
    }
    const std::int64_t ts = cfg_.encoder.token_spatial();
    tokens = layout.num_patches() * ts * ts;
    end();

    begin("encode");
    auto [seq, skips] = encode_patches(encoder_, batch, opts.encoder_mini_batch);
    batch.patches = Tensor();
    end();

    begin("bottleneck");
    GlobalSequence global = bottleneck_forward(bottleneck_, flatten_tokens(seq));
    seq.tokens = Tensor();
    end();

    begin("decode");
    Tensor patches = decode_patches(decoder_, global, skips, opts.decoder_mini_batch);
    global.tokens = Tensor();
    skips.stages.clear();
    end();

    begin("reassemble");
    Tensor out;
    {
      DomainGuard host(Domain::host);
      out = reassemble_tensor(patches, layout);
    }
    end();
    return out;
  } catch (const OutOfMemory& oom) {
    throw StageOutOfMemory(stage, tokens, oom);
  }
}

ImageTensor DehazeModel::dehaze(const ImageTensor& image, const RuntimeOptions& opts) const {
  NoGradGuard no_grad;
  Tensor input;
  {
    DomainGuard host(Domain::host);
    input = image.to_tensor();
  }
  return ImageTensor::from_tensor(forward(input, opts));
}

std::uint64_t DehazeModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : const_cast<DehazeModel*>(this)->parameters()) {
    mix(name.data(), name.size());
    for (auto d : t->shape()) mix(&d, sizeof d);
    mix(t->data(), static_cast<std::size_t>(t->numel()) * sizeof(float));
  }
  return h;
}

}  // namespace tessera
