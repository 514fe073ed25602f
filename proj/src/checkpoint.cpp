#include "editbench/checkpoint.hpp"

#include "binio.hpp"

namespace editbench {

namespace {
constexpr char kMagic[5] = "EBCK";

void write_tensor(binio::Writer& w, const Tensor& t) {
  const auto& s = t.shape();
  w.u32(static_cast<uint32_t>(s.size()));
  for (int d : s) w.u64(static_cast<uint64_t>(d));
  w.f64_array(t.data(), static_cast<size_t>(t.size()));
}

Tensor read_tensor(binio::Reader& r) {
  const uint32_t ndim = r.u32();
  if (ndim == 0 || ndim > 8) throw FormatError("bad tensor rank in checkpoint");
  std::vector<int> shape;
  uint64_t total = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    const uint64_t d = r.u64();
    if (d == 0 || d > (1u << 24)) throw FormatError("bad tensor extent in checkpoint");
    total *= d;
    if (total > (1u << 28)) throw FormatError("tensor too large in checkpoint");
    shape.push_back(static_cast<int>(d));
  }
  if (r.remaining() < total * 8) throw FormatError("checkpoint payload truncated");
  return Tensor::from(std::move(shape), r.f64_array(total));
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.magic(kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<uint32_t>(network.class_count()));
  w.u32(static_cast<uint32_t>(network.layer_count()));
  for (int l = 1; l <= network.layer_count(); ++l) {
    const Layer& layer = network.layer(l);
    const LayerSpec& s = layer.spec;
    w.u8(static_cast<uint8_t>(s.kind));
    w.u8(static_cast<uint8_t>(s.act));
    w.i32(s.in_channels);
    w.i32(s.out_channels);
    w.i32(s.kernel);
    w.i32(s.stride);
    w.i32(s.padding);
    w.i32(s.in_features);
    w.i32(s.out_features);
    w.i32(s.window);
    w.u8(layer.has_params() ? 1 : 0);
    if (layer.has_params()) {
      write_tensor(w, layer.weight);
      write_tensor(w, layer.bias);
    }
  }
  w.u64(meta.seed);
  w.f64(meta.base_val_accuracy);
  w.str(meta.dataset_id);
  w.write_file(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  binio::Reader r = binio::Reader::from_file(path);
  r.expect_magic(kMagic, "checkpoint");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw FormatError("unsupported checkpoint format version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");

  const uint32_t class_count = r.u32();
  const uint32_t layer_count = r.u32();
  if (class_count < 1 || class_count > 4096 || layer_count < 1 || layer_count > 256)
    throw FormatError("bad checkpoint header");

  std::vector<LayerSpec> arch;
  std::vector<std::pair<Tensor, Tensor>> params;
  for (uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec s;
    const uint8_t kind = r.u8();
    if (kind > 3) throw FormatError("bad layer kind in checkpoint");
    s.kind = static_cast<LayerKind>(kind);
    const uint8_t act = r.u8();
    if (act > 2) throw FormatError("bad activation in checkpoint");
    s.act = static_cast<Activation>(act);
    s.in_channels = r.i32();
    s.out_channels = r.i32();
    s.kernel = r.i32();
    s.stride = r.i32();
    s.padding = r.i32();
    s.in_features = r.i32();
    s.out_features = r.i32();
    s.window = r.i32();
    for (int field : {s.in_channels, s.out_channels, s.kernel, s.stride, s.padding,
                      s.in_features, s.out_features, s.window})
      if (field < 0 || field > (1 << 20))
        throw FormatError("layer field out of range in checkpoint");
    const uint8_t has_params = r.u8();
    if (has_params > 1) throw FormatError("bad layer flags in checkpoint");
    arch.push_back(s);
    if (has_params) {
      Tensor weight = read_tensor(r);
      Tensor bias = read_tensor(r);
      params.emplace_back(std::move(weight), std::move(bias));
    } else {
      params.emplace_back(Tensor{}, Tensor{});
    }
  }

  Checkpoint ckpt;
  try {
    ckpt.network = Network(arch, static_cast<int>(class_count), /*init_seed=*/0);
    for (uint32_t i = 0; i < layer_count; ++i) {
      Layer& layer = ckpt.network.layer(static_cast<int>(i) + 1);
      const bool expect_params = layer.has_params();
      const bool got_params = params[i].first.defined();
      if (expect_params != got_params)
        throw FormatError("layer parameter presence mismatch in checkpoint");
      if (got_params) {
        if (params[i].first.shape() != layer.weight.shape() ||
            params[i].second.shape() != layer.bias.shape())
          throw FormatError("layer parameter shape mismatch in checkpoint");
        layer.weight = std::move(params[i].first);
        layer.bias = std::move(params[i].second);
      }
    }
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent checkpoint architecture: ") + e.what());
  }

  ckpt.meta.seed = r.u64();
  ckpt.meta.base_val_accuracy = r.f64();
  ckpt.meta.dataset_id = r.str();
  return ckpt;
}

}  // namespace editbench
