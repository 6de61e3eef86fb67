#pragma once

#include "dsr/autodiff.hpp"
#include "dsr/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dsr {

/// Which network a parameter set belongs to.
enum class ModuleTag {
  kSpeechEncoder,      // Phi_p / Phi_{s_d}
  kDurationPredictor,  // theta_d
  kPitchPredictor,     // theta_p
  kSpeakerEncoder,     // theta_s^sv / theta_s^asa
  kGenerator,          // theta_g
  kDiscriminator,      // phi
  kOptimizerState,
};

std::string to_string(ModuleTag tag);
ModuleTag module_tag_from_string(const std::string& name);

/// Named dense tensors plus the integer hyper-parameters needed to rebuild
/// the network that uses them. Tensors are kept sorted by name so iteration
/// order (and therefore the checksum) is canonical.
struct ModelParams {
  ModuleTag tag = ModuleTag::kGenerator;
  std::string version = "1";
  std::map<std::string, long> hyper;
  std::map<std::string, Matrix> tensors;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  long hyper_at(const std::string& name) const;
  Index parameter_count() const;
  /// CRC-64 over tag, version, hyper-parameters, names, shapes and values.
  std::uint64_t checksum() const;
};

using Gradients = std::map<std::string, Matrix>;

/// A ModelParams bound into the autodiff graph for one forward pass. When
/// trainable, every tensor becomes a gradient-requiring leaf; otherwise the
/// tensors enter as constants and receive no gradient at all.
class ParamSet {
 public:
  ParamSet(const ModelParams& params, bool trainable);

  const ad::Var& operator[](const std::string& name) const;
  long hyper(const std::string& name) const { return params_->hyper_at(name); }
  bool trainable() const { return trainable_; }
  const ModelParams& params() const { return *params_; }
  Gradients gradients() const;
  void zero_grad();

 private:
  const ModelParams* params_;
  bool trainable_;
  std::map<std::string, ad::Var> vars_;
};

enum class SystemLabel { kSvDsr, kAsaDsr };
std::string to_string(SystemLabel label);

/// The five networks of a reconstruction system.
struct SystemBundle {
  ModelParams speech_encoder;
  ModelParams duration_predictor;
  ModelParams pitch_predictor;
  ModelParams speaker_encoder;
  ModelParams generator;
  SystemLabel label = SystemLabel::kSvDsr;

  /// Throws Error when a slot carries the wrong tag or the shapes do not
  /// agree on inventory size, embedding size or mel bins.
  void validate() const;
};

/// Binary container: header, then one section per ModelParams, each with its
/// own checksum, then a checksum over the whole file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<ModelParams>& modules,
                     const std::string& label = "");
struct CheckpointContents {
  std::string label;
  std::vector<ModelParams> modules;
};
CheckpointContents load_checkpoint(const std::filesystem::path& path);

void save_params(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path, std::optional<ModuleTag> expect = {});

void save_bundle(const std::filesystem::path& path, const SystemBundle& bundle);
SystemBundle load_bundle(const std::filesystem::path& path);

}  // namespace dsr
