#include "dsr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace dsr {

namespace {

StageConfig stage(std::string name, optim::Kind kind, double lr, int batch, long steps) {
  StageConfig s;
  s.name = std::move(name);
  s.optimizer.kind = kind;
  s.optimizer.learning_rate = lr;
  s.batch_size = batch;
  s.steps = steps;
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) throw Error("config: bad value '" + value + "' for " + key);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Binding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Binding bind_value(const std::string& key, T& ref) {
  if constexpr (std::is_same_v<T, bool>) {
    return {[&ref, key](const std::string& v) {
              if (v == "true" || v == "1") ref = true;
              else if (v == "false" || v == "0") ref = false;
              else throw Error("config: bad boolean '" + v + "' for " + key);
            },
            [&ref] { return std::string(ref ? "true" : "false"); }};
  } else if constexpr (std::is_floating_point_v<T>) {
    return {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
            [&ref] { return format_double(ref); }};
  } else {
    return {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
            [&ref] { return std::to_string(ref); }};
  }
}

using Table = std::vector<std::pair<std::string, Binding>>;

void add_stage(Table& t, const std::string& prefix, StageConfig& s) {
  t.emplace_back(prefix + ".optimizer",
                 Binding{[&s](const std::string& v) { s.optimizer.kind = optim::kind_from_string(v); },
                         [&s] { return optim::to_string(s.optimizer.kind); }});
  t.emplace_back(prefix + ".lr", bind_value(prefix + ".lr", s.optimizer.learning_rate));
  t.emplace_back(prefix + ".clip", bind_value(prefix + ".clip", s.optimizer.clip_norm));
  t.emplace_back(prefix + ".batch", bind_value(prefix + ".batch", s.batch_size));
  t.emplace_back(prefix + ".steps", bind_value(prefix + ".steps", s.steps));
  t.emplace_back(prefix + ".seed", bind_value(prefix + ".seed", s.seed));
}

Table table(PipelineConfig& c) {
  Table t;
  t.emplace_back("seed", Binding{[&c](const std::string& v) {
                                   const auto seed = parse_number<std::uint64_t>("seed", v);
                                   c.seed = seed;
                                   c.corpus.seed = seed;
                                   for (StageConfig* s : {&c.pretrain, &c.finetune, &c.prosody, &c.speaker,
                                                          &c.generator_training, &c.asa})
                                     s->seed = seed;
                                 },
                                 [&c] { return std::to_string(c.seed); }});
  auto& cc = c.corpus;
  t.emplace_back("corpus.healthy_speakers", bind_value("corpus.healthy_speakers", cc.healthy_speakers));
  t.emplace_back("corpus.dysarthric_speakers", bind_value("corpus.dysarthric_speakers", cc.dysarthric_speakers));
  t.emplace_back("corpus.utterances_per_speaker", bind_value("corpus.utterances_per_speaker", cc.utterances_per_speaker));
  t.emplace_back("corpus.reference_utterances", bind_value("corpus.reference_utterances", cc.reference_utterances));
  t.emplace_back("corpus.phonemes", bind_value("corpus.phonemes", cc.phoneme_inventory_size));
  t.emplace_back("corpus.min_phonemes", bind_value("corpus.min_phonemes", cc.min_phonemes));
  t.emplace_back("corpus.max_phonemes", bind_value("corpus.max_phonemes", cc.max_phonemes));
  t.emplace_back("corpus.test_fraction", bind_value("corpus.test_fraction", cc.test_fraction));
  t.emplace_back("corpus.seed", bind_value("corpus.seed", cc.seed));
  t.emplace_back("corpus.tempo_factor", bind_value("corpus.tempo_factor", cc.dysarthria.tempo_factor));
  t.emplace_back("corpus.pitch_flatten", bind_value("corpus.pitch_flatten", cc.dysarthria.pitch_flatten));
  t.emplace_back("corpus.substitution_rate", bind_value("corpus.substitution_rate", cc.dysarthria.substitution_rate));
  t.emplace_back("corpus.breathiness", bind_value("corpus.breathiness", cc.dysarthria.breathiness));

  auto& se = c.speech_encoder;
  t.emplace_back("speech_encoder.conv_channels", bind_value("speech_encoder.conv_channels", se.conv_channels));
  t.emplace_back("speech_encoder.encoder_hidden", bind_value("speech_encoder.encoder_hidden", se.encoder_hidden));
  t.emplace_back("speech_encoder.decoder_hidden", bind_value("speech_encoder.decoder_hidden", se.decoder_hidden));
  t.emplace_back("speech_encoder.attention_dim", bind_value("speech_encoder.attention_dim", se.attention_dim));
  t.emplace_back("speech_encoder.token_embedding", bind_value("speech_encoder.token_embedding", se.token_embedding));
  t.emplace_back("speech_encoder.location_filters", bind_value("speech_encoder.location_filters", se.location_filters));
  t.emplace_back("speech_encoder.location_kernel", bind_value("speech_encoder.location_kernel", se.location_kernel));
  t.emplace_back("predictor.channels", bind_value("predictor.channels", c.predictor.channels));
  t.emplace_back("predictor.kernel", bind_value("predictor.kernel", c.predictor.kernel));
  t.emplace_back("speaker_encoder.hidden", bind_value("speaker_encoder.hidden", c.speaker_encoder.hidden));
  t.emplace_back("speaker_encoder.layers", bind_value("speaker_encoder.layers", c.speaker_encoder.layers));
  t.emplace_back("generator.channels", bind_value("generator.channels", c.generator.channels));
  t.emplace_back("generator.kernel", bind_value("generator.kernel", c.generator.kernel));
  t.emplace_back("generator.layers", bind_value("generator.layers", c.generator.layers));
  t.emplace_back("discriminator.channels", bind_value("discriminator.channels", c.discriminator.channels));
  t.emplace_back("discriminator.strided_layers", bind_value("discriminator.strided_layers", c.discriminator.strided_layers));

  add_stage(t, "pretrain", c.pretrain);
  add_stage(t, "finetune", c.finetune);
  add_stage(t, "prosody", c.prosody);
  add_stage(t, "spk", c.speaker);
  add_stage(t, "gen", c.generator_training);
  add_stage(t, "asa", c.asa);

  t.emplace_back("ge2e.speakers", bind_value("ge2e.speakers", c.ge2e_speakers));
  t.emplace_back("ge2e.utterances", bind_value("ge2e.utterances", c.ge2e_utterances));
  t.emplace_back("spk.crop", bind_value("spk.crop", c.speaker_crop));
  t.emplace_back("asa.lambda", bind_value("asa.lambda", c.asa_lambda));
  t.emplace_back("asa.grl", bind_value("asa.grl", c.asa_use_grl));
  t.emplace_back("griffin_lim.iterations", bind_value("griffin_lim.iterations", c.griffin_lim_iterations));
  t.emplace_back("griffin_lim.momentum", bind_value("griffin_lim.momentum", c.griffin_lim_momentum));
  return t;
}

void sync_inventory(PipelineConfig& c) {
  const int p = c.corpus.phoneme_inventory_size;
  c.speech_encoder.phonemes = p;
  c.predictor.phonemes = p;
  c.generator.phonemes = p;
}

}  // namespace

std::vector<std::string> profile_names() { return {"desk", "paper", "tiny"}; }

PipelineConfig profile_config(const std::string& name) {
  using optim::Kind;
  PipelineConfig c;
  c.profile = name;
  c.pretrain = stage("pretrain", Kind::kAdadelta, 1.0, 8, 2000);
  c.finetune = stage("finetune", Kind::kAdadelta, 1.0, 8, 300);
  c.prosody = stage("prosody", Kind::kAdam, 1e-3, 16, 1000);
  c.speaker = stage("spk", Kind::kAdam, 1e-3, 16, 1500);
  c.generator_training = stage("gen", Kind::kAdam, 1e-3, 8, 2000);
  c.asa = stage("asa", Kind::kAdam, 1e-4, 8, 500);
  if (name == "desk") {
    // defaults above
  } else if (name == "paper") {
    c.pretrain.steps = 1000000;
    c.finetune.steps = 2000;
    c.prosody.steps = 30000;
    c.speaker.steps = 100000;
    c.generator_training.steps = 50000;
    c.generator_training.batch_size = 16;
    c.asa.steps = 5000;
    c.speaker_encoder.hidden = 256;
    c.speech_encoder.conv_channels = 256;
    c.speech_encoder.encoder_hidden = 256;
    c.speech_encoder.decoder_hidden = 256;
    c.speech_encoder.attention_dim = 256;
    c.generator.channels = 256;
    c.predictor.channels = 256;
    c.ge2e_speakers = 8;
    c.ge2e_utterances = 8;
    c.speaker_crop = 160;
  } else if (name == "tiny") {
    c.corpus.healthy_speakers = 4;
    c.corpus.dysarthric_speakers = 1;
    c.corpus.utterances_per_speaker = 6;
    c.corpus.reference_utterances = 8;
    c.corpus.max_phonemes = 6;
    c.speech_encoder.conv_channels = 16;
    c.speech_encoder.encoder_hidden = 16;
    c.speech_encoder.decoder_hidden = 16;
    c.speech_encoder.attention_dim = 16;
    c.speech_encoder.token_embedding = 8;
    c.speaker_encoder.hidden = 16;
    c.generator.channels = 16;
    c.predictor.channels = 16;
    c.discriminator.channels = 4;
    c.pretrain.steps = 20;
    c.finetune.steps = 5;
    c.prosody.steps = 20;
    c.speaker.steps = 20;
    c.generator_training.steps = 20;
    c.asa.steps = 10;
    c.asa.batch_size = 2;
    c.ge2e_speakers = 2;
    c.ge2e_utterances = 2;
    c.griffin_lim_iterations = 8;
  } else {
    throw Error("unknown profile '" + name + "' (expected desk, paper or tiny)");
  }
  sync_inventory(c);
  return c;
}

void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "profile") {
    const std::uint64_t seed = cfg.seed;
    cfg = profile_config(value);
    apply_setting(cfg, "seed", std::to_string(seed));
    return;
  }
  for (auto& [k, b] : table(cfg)) {
    if (k == key) {
      b.set(value);
      sync_inventory(cfg);
      return;
    }
  }
  throw Error("config: unknown key '" + key + "'");
}

void apply_config_text(PipelineConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

PipelineConfig load_config(const std::filesystem::path& path, const std::string& profile) {
  PipelineConfig cfg = profile_config(profile.empty() ? "desk" : profile);
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::string text, line;
    while (std::getline(in, line)) {
      // An explicit profile argument wins over the file's own profile line.
      const auto eq = line.find('=');
      if (!profile.empty() && eq != std::string::npos && trim(line.substr(0, eq)) == "profile") continue;
      text += line + '\n';
    }
    apply_config_text(cfg, text);
  }
  cfg.validate();
  return cfg;
}

void PipelineConfig::validate() const {
  corpus.validate();
  for (const StageConfig* s : {&pretrain, &finetune, &prosody, &speaker, &generator_training, &asa}) {
    if (s->steps < 0) throw Error("config: " + s->name + ".steps must be non-negative");
    if (s->batch_size < 1) throw Error("config: " + s->name + ".batch must be positive");
    if (s->optimizer.learning_rate <= 0) throw Error("config: " + s->name + ".lr must be positive");
  }
  if (ge2e_speakers < 2 || ge2e_utterances < 2) throw Error("config: GE2E batches need N >= 2 and M >= 2");
  if (ge2e_speakers > corpus.healthy_speakers + 1)
    throw Error("config: ge2e.speakers exceeds the number of healthy speakers");
  if (speaker_crop < 1) throw Error("config: spk.crop must be positive");
  if (asa_lambda < 0) throw Error("config: asa.lambda must be non-negative");
  if (griffin_lim_iterations < 1) throw Error("config: griffin_lim.iterations must be positive");
  for (int v : {speech_encoder.conv_channels, speech_encoder.encoder_hidden, speech_encoder.decoder_hidden,
                speech_encoder.attention_dim, speech_encoder.token_embedding, speech_encoder.location_filters,
                speech_encoder.location_kernel, predictor.channels, predictor.kernel, speaker_encoder.hidden,
                speaker_encoder.layers, generator.channels, generator.kernel, generator.layers,
                discriminator.channels, discriminator.strided_layers})
    if (v < 1) throw Error("config: model widths must be positive");
}

std::string PipelineConfig::to_text() const {
  std::ostringstream out;
  out << "profile = " << profile << '\n';
  PipelineConfig copy = *this;
  for (auto& [k, b] : table(copy)) out << k << " = " << b.get() << '\n';
  return out.str();
}

}  // namespace dsr
