#pragma once
// The fixed 29-symbol vocabulary: numbers "0".."19", the specials <unk>,
// <bos>, <pad>, and the markers ":", "S", "P", "C", "A", "I".

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace statewalk {

namespace tok {
constexpr int kUnk = 20;
constexpr int kBos = 21;
constexpr int kPad = 22;
constexpr int kColon = 23;
constexpr int kS = 24;
constexpr int kP = 25;
constexpr int kC = 26;
constexpr int kA = 27;
constexpr int kI = 28;
}  // namespace tok

class Vocab {
 public:
  static constexpr int kSize = 29;

  // The canonical, process-wide vocabulary.
  static const Vocab& get();

  int id_of(std::string_view symbol) const;  // -1 when unknown
  const std::string& symbol_of(int id) const;  // throws IdOutOfRange(0, id)

  // Whitespace-separated symbols -> ids; throws UnknownSymbol(position, text).
  std::vector<int> encode(std::string_view text) const;

  // Ids -> single-space-joined symbols; throws IdOutOfRange(index, id).
  std::string decode(const std::vector<int>& ids) const;

  // {"symbols": [29 strings in id order]} for dataset and checkpoint manifests.
  nlohmann::json to_json() const;

 private:
  Vocab();
  std::vector<std::string> symbols_;
};

}  // namespace statewalk
