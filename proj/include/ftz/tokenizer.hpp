#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ftz/errors.hpp"

namespace ftz {

// Word-level whitespace tokenizer over the closed synthetic grammar plus
// specials. The vocabulary is fixed in code; the manifest file exists so
// checkpoints are self-describing.
class Tokenizer {
 public:
  static Tokenizer canonical();

  int id(const std::string& word) const;  // unknown word -> InputError
  const std::string& word(int id) const;  // out of range -> IndexError
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  int pad_id() const { return 0; }
  int bos_id() const { return 1; }
  int eos_id() const { return 2; }
  int size() const { return static_cast<int>(words_.size()); }

  // FNV-1a over the word list; cheap vocabulary-compatibility check.
  uint64_t fingerprint() const;

  // One line per token, "<word>\t<id>", sorted by id.
  void save_manifest(const std::string& path) const;
  static Tokenizer load_manifest(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  void rebuild_index();
};

}  // namespace ftz
