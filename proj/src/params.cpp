#include "dsr/params.hpp"

#include <boost/crc.hpp>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dsr {

namespace {

using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ull, 0xFFFFFFFFFFFFFFFFull,
                                 0xFFFFFFFFFFFFFFFFull, true, true>;

constexpr std::array<std::pair<ModuleTag, const char*>, 7> kTagNames{{
    {ModuleTag::kSpeechEncoder, "speech_encoder"},
    {ModuleTag::kDurationPredictor, "duration_predictor"},
    {ModuleTag::kPitchPredictor, "pitch_predictor"},
    {ModuleTag::kSpeakerEncoder, "speaker_encoder"},
    {ModuleTag::kGenerator, "generator"},
    {ModuleTag::kDiscriminator, "discriminator"},
    {ModuleTag::kOptimizerState, "optimizer_state"},
}};

constexpr char kMagic[8] = {'D', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end) : buf_(buf), end_(end) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > end_) throw FormatError("checkpoint: truncated file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > end_ - pos_) throw FormatError("checkpoint: string length out of range");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// Header (tag, version, hyper, shapes) and payload of one module.
void write_module_body(Writer& w, const ModelParams& p) {
  w.str(to_string(p.tag));
  w.str(p.version);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.hyper.size()));
  for (const auto& [k, v] : p.hyper) {
    w.str(k);
    w.pod<std::int64_t>(v);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& [name, m] : p.tensors) {
    w.str(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  }
  for (const auto& [name, m] : p.tensors) w.bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

std::uint64_t crc_of(const char* data, std::size_t n) {
  Crc64 crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

}  // namespace

std::string to_string(ModuleTag tag) {
  for (const auto& [t, name] : kTagNames)
    if (t == tag) return name;
  throw Error("unknown module tag");
}

ModuleTag module_tag_from_string(const std::string& name) {
  for (const auto& [t, n] : kTagNames)
    if (name == n) return t;
  throw FormatError("unknown module tag '" + name + "'");
}

std::string to_string(SystemLabel label) { return label == SystemLabel::kSvDsr ? "SV-DSR" : "ASA-DSR"; }

const Matrix& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(to_string(tag) + ": no parameter '" + name + "'");
  return it->second;
}

Matrix& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(to_string(tag) + ": no parameter '" + name + "'");
  return it->second;
}

long ModelParams::hyper_at(const std::string& name) const {
  auto it = hyper.find(name);
  if (it == hyper.end()) throw Error(to_string(tag) + ": no hyper-parameter '" + name + "'");
  return it->second;
}

Index ModelParams::parameter_count() const {
  Index n = 0;
  for (const auto& [name, m] : tensors) n += m.size();
  return n;
}

std::uint64_t ModelParams::checksum() const {
  Writer w;
  write_module_body(w, *this);
  return crc_of(w.buffer().data(), w.buffer().size());
}

ParamSet::ParamSet(const ModelParams& params, bool trainable) : params_(&params), trainable_(trainable) {
  for (const auto& [name, m] : params.tensors) vars_.emplace(name, trainable ? ad::leaf(m) : ad::constant(m));
}

const ad::Var& ParamSet::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error(to_string(params_->tag) + ": no parameter '" + name + "'");
  return it->second;
}

Gradients ParamSet::gradients() const {
  Gradients g;
  for (const auto& [name, v] : vars_) g.emplace(name, v.grad());
  return g;
}

void ParamSet::zero_grad() {
  for (auto& [name, v] : vars_) v.zero_grad();
}

void SystemBundle::validate() const {
  auto expect = [](const ModelParams& p, ModuleTag tag) {
    if (p.tag != tag) throw Error("bundle: slot holds " + to_string(p.tag) + ", expected " + to_string(tag));
    if (p.tensors.empty()) throw Error("bundle: " + to_string(tag) + " has no parameters");
  };
  expect(speech_encoder, ModuleTag::kSpeechEncoder);
  expect(duration_predictor, ModuleTag::kDurationPredictor);
  expect(pitch_predictor, ModuleTag::kPitchPredictor);
  expect(speaker_encoder, ModuleTag::kSpeakerEncoder);
  expect(generator, ModuleTag::kGenerator);
  const long phonemes = speech_encoder.hyper_at("phonemes");
  if (duration_predictor.hyper_at("phonemes") != phonemes || pitch_predictor.hyper_at("phonemes") != phonemes ||
      generator.hyper_at("phonemes") != phonemes)
    throw Error("bundle: phoneme inventory sizes disagree");
  if (generator.hyper_at("embedding") != speaker_encoder.hyper_at("embedding"))
    throw Error("bundle: speaker embedding sizes disagree");
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<ModelParams>& modules,
                     const std::string& label) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(label);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(modules.size()));
  for (const auto& m : modules) {
    const std::size_t start = w.buffer().size();
    write_module_body(w, m);
    const std::uint64_t crc = crc_of(w.buffer().data() + start, w.buffer().size() - start);
    w.pod<std::uint64_t>(crc);
  }
  w.pod<std::uint64_t>(crc_of(w.buffer().data(), w.buffer().size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("write failed for " + path.string());
}

CheckpointContents load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4 + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path.string() + ": not a checkpoint file");

  const std::size_t body_end = buf.size() - 8;
  Reader r(buf, body_end);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));

  CheckpointContents contents;
  contents.label = r.str();
  const auto n_modules = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_modules; ++i) {
    const std::size_t start = r.pos();
    ModelParams p;
    p.tag = module_tag_from_string(r.str());
    p.version = r.str();
    const auto n_hyper = r.pod<std::uint32_t>();
    for (std::uint32_t h = 0; h < n_hyper; ++h) {
      std::string key = r.str();
      p.hyper[key] = static_cast<long>(r.pod<std::int64_t>());
    }
    const auto n_tensors = r.pod<std::uint32_t>();
    std::vector<std::pair<std::string, std::pair<std::uint32_t, std::uint32_t>>> shapes;
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
      std::string name = r.str();
      const auto rows = r.pod<std::uint32_t>();
      const auto cols = r.pod<std::uint32_t>();
      shapes.push_back({std::move(name), {rows, cols}});
    }
    for (const auto& [name, shape] : shapes) {
      Matrix m(shape.first, shape.second);
      r.bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
      p.tensors.emplace(name, std::move(m));
    }
    const std::uint64_t expect = crc_of(buf.data() + start, r.pos() - start);
    if (r.pod<std::uint64_t>() != expect)
      throw ChecksumError(path.string() + ": checksum mismatch in " + to_string(p.tag) + " section");
    contents.modules.push_back(std::move(p));
  }
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body_end, sizeof(stored));
  if (r.pos() != body_end) throw FormatError(path.string() + ": trailing bytes");
  if (stored != crc_of(buf.data(), body_end)) throw ChecksumError(path.string() + ": file checksum mismatch");
  return contents;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  save_checkpoint(path, {params}, to_string(params.tag));
}

ModelParams load_params(const std::filesystem::path& path, std::optional<ModuleTag> expect) {
  auto c = load_checkpoint(path);
  if (c.modules.size() != 1) throw FormatError(path.string() + ": expected a single-module checkpoint");
  if (expect && c.modules[0].tag != *expect)
    throw FormatError(path.string() + ": holds " + to_string(c.modules[0].tag) + ", expected " + to_string(*expect));
  return std::move(c.modules[0]);
}

void save_bundle(const std::filesystem::path& path, const SystemBundle& bundle) {
  bundle.validate();
  save_checkpoint(path,
                  {bundle.speech_encoder, bundle.duration_predictor, bundle.pitch_predictor, bundle.speaker_encoder,
                   bundle.generator},
                  to_string(bundle.label));
}

SystemBundle load_bundle(const std::filesystem::path& path) {
  auto c = load_checkpoint(path);
  if (c.modules.size() != 5) throw FormatError(path.string() + ": incomplete bundle");
  SystemBundle b;
  if (c.label == "SV-DSR")
    b.label = SystemLabel::kSvDsr;
  else if (c.label == "ASA-DSR")
    b.label = SystemLabel::kAsaDsr;
  else
    throw FormatError(path.string() + ": not a system bundle (label '" + c.label + "')");
  b.speech_encoder = std::move(c.modules[0]);
  b.duration_predictor = std::move(c.modules[1]);
  b.pitch_predictor = std::move(c.modules[2]);
  b.speaker_encoder = std::move(c.modules[3]);
  b.generator = std::move(c.modules[4]);
  b.validate();
  return b;
}

}  // namespace dsr
