#include "ftz/tokenizer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ftz {

Tokenizer Tokenizer::canonical() {
  Tokenizer t;
  t.words_ = {
      "<pad>", "<bos>", "<eos>", "?",
      "a", "are", "blue", "circle", "describe", "green", "how", "image", "is",
      "many", "no", "orange", "purple", "red", "square", "the", "there",
      "triangle", "yellow", "yes",
      "0", "1", "2", "3", "4", "5", "6",
  };
  t.rebuild_index();
  return t;
}

void Tokenizer::rebuild_index() {
  ids_.clear();
  for (size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = static_cast<int>(i);
}

int Tokenizer::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw InputError("unknown vocabulary word: '" + word + "'");
  return it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range [0," +
                     std::to_string(size()) + ")");
  }
  return words_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(id(word));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

uint64_t Tokenizer::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& w : words_) {
    for (char c : w) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Tokenizer::save_manifest(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (size_t i = 0; i < words_.size(); ++i) {
    out << words_[i] << '\t' << i << '\n';
  }
  if (!out) throw IoError("short write: " + path);
}

Tokenizer Tokenizer::load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  Tokenizer t;
  std::string line;
  int expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) throw InputError("malformed manifest line in " + path);
    const std::string word = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    if (id != expected) throw InputError("manifest ids not consecutive in " + path);
    t.words_.push_back(word);
    ++expected;
  }
  if (t.words_.empty()) throw InputError("empty tokenizer manifest: " + path);
  t.rebuild_index();
  return t;
}

}  // namespace ftz
