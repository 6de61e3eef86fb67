#include "dsr/phonemes.hpp"

#include "dsr/core.hpp"

#include <sstream>

namespace dsr {

PhonemeInventory PhonemeInventory::toy() {
  return PhonemeInventory({"AA", "IY", "UW", "EH", "B", "M", "N", "L", "S", "F"});
}

PhonemeInventory::PhonemeInventory(std::vector<std::string> phonemes) : symbols_(std::move(phonemes)) {
  if (symbols_.empty()) throw Error("phoneme inventory must not be empty");
  symbols_.emplace_back(kSilenceSymbol);
  symbols_.emplace_back(kEosSymbol);
}

std::optional<int> PhonemeInventory::find(std::string_view symbol) const {
  for (int i = 0; i < size(); ++i)
    if (symbols_[static_cast<std::size_t>(i)] == symbol) return i;
  return std::nullopt;
}

int PhonemeInventory::id(std::string_view symbol) const {
  auto found = find(symbol);
  if (!found) throw FormatError("unknown phoneme symbol '" + std::string(symbol) + "'");
  return *found;
}

const std::string& PhonemeInventory::symbol(int id) const {
  if (id < 0 || id >= size()) throw Error("phoneme id out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

std::vector<int> PhonemeInventory::parse_sequence(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<int> ids;
  std::string tok;
  while (in >> tok) ids.push_back(id(tok));
  return ids;
}

std::string PhonemeInventory::format_sequence(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += symbol(ids[i]);
  }
  return out;
}

}  // namespace dsr
