#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dsr {

/// Fixed symbol inventory shared by alignments, label files and the
/// speech-encoder output layer. The last two symbols are always the silence
/// symbol and the end-of-sequence marker; EOS never appears in alignments.
class PhonemeInventory {
 public:
  /// The toy inventory: ten phonemes plus SIL and </s>.
  static PhonemeInventory toy();
  /// Builds an inventory from `phonemes` followed by SIL and </s>.
  explicit PhonemeInventory(std::vector<std::string> phonemes);

  int size() const { return static_cast<int>(symbols_.size()); }
  int silence() const { return size() - 2; }
  int eos() const { return size() - 1; }
  /// Number of symbols that may appear in an alignment (everything but EOS).
  int spoken_size() const { return size() - 1; }

  std::optional<int> find(std::string_view symbol) const;
  /// Throws FormatError for an unknown symbol.
  int id(std::string_view symbol) const;
  const std::string& symbol(int id) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  std::vector<int> parse_sequence(std::string_view text) const;
  std::string format_sequence(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> symbols_;
};

inline constexpr std::string_view kSilenceSymbol = "SIL";
inline constexpr std::string_view kEosSymbol = "</s>";

}  // namespace dsr
