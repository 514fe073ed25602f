#include "editbench/dataset.hpp"

#include "binio.hpp"

namespace editbench {

namespace {
constexpr char kMagic[5] = "EBDS";
constexpr uint32_t kVersion = 1;
}  // namespace

const char* split_tag_name(SplitTag t) {
  switch (t) {
    case SplitTag::full: return "full";
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
  }
  return "?";
}

Tensor SynthDataset::onehot() const {
  Tensor out = Tensor::zeros({static_cast<int>(size()), class_count});
  for (int64_t i = 0; i < size(); ++i)
    out[i * class_count + labels[static_cast<size_t>(i)]] = 1.0;
  return out;
}

SynthDataset SynthDataset::subset(const std::vector<int64_t>& indices) const {
  SynthDataset out;
  out.class_count = class_count;
  out.seed = seed;
  out.spec_echo = spec_echo;
  out.split = split;
  out.id = id;
  const auto& s = images.shape();
  const int64_t plane = images.size() / s[0];
  std::vector<int> shape = s;
  shape[0] = static_cast<int>(indices.size());
  std::vector<double> buf;
  buf.reserve(static_cast<size_t>(plane) * indices.size());
  out.labels.reserve(indices.size());
  for (int64_t idx : indices) {
    const double* p = images.data() + idx * plane;
    buf.insert(buf.end(), p, p + plane);
    out.labels.push_back(labels[static_cast<size_t>(idx)]);
  }
  out.images = Tensor::from(std::move(shape), std::move(buf));
  return out;
}

void SynthDataset::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.magic(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(class_count));
  const auto& s = images.shape();
  w.u64(static_cast<uint64_t>(s[0]));
  w.u32(static_cast<uint32_t>(s[1]));
  w.u32(static_cast<uint32_t>(s[2]));
  w.u32(static_cast<uint32_t>(s[3]));
  w.u64(seed);
  w.u8(static_cast<uint8_t>(split));
  w.str(spec_echo);
  w.str(id);
  w.f64_array(images.data(), static_cast<size_t>(images.size()));
  w.i32_array(labels.data(), labels.size());
  w.write_file(path);
}

SynthDataset SynthDataset::load(const std::filesystem::path& path) {
  binio::Reader r = binio::Reader::from_file(path);
  r.expect_magic(kMagic, "dataset");
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("unsupported dataset format version " + std::to_string(version));

  SynthDataset d;
  d.class_count = static_cast<int>(r.u32());
  const uint64_t n = r.u64();
  const uint32_t c = r.u32();
  const uint32_t h = r.u32();
  const uint32_t w = r.u32();
  d.seed = r.u64();
  const uint8_t tag = r.u8();
  if (tag > 2) throw FormatError("bad split tag in dataset");
  d.split = static_cast<SplitTag>(tag);
  d.spec_echo = r.str();
  d.id = r.str();

  if (d.class_count < 1 || n == 0 || c == 0 || h == 0 || w == 0)
    throw FormatError("bad dataset header");
  const uint64_t pixels = n * c * h * w;
  if (r.remaining() < pixels * 8 + n * 4)
    throw FormatError("dataset payload truncated");
  d.images = Tensor::from({static_cast<int>(n), static_cast<int>(c),
                           static_cast<int>(h), static_cast<int>(w)},
                          r.f64_array(pixels));
  d.labels = r.i32_array(n);
  for (int32_t lab : d.labels)
    if (lab < 0 || lab >= d.class_count)
      throw FormatError("label out of range in dataset");
  return d;
}

}  // namespace editbench
