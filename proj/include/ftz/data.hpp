#pragma once

#include <string>
#include <vector>

#include "ftz/tokenizer.hpp"
#include "ftz/vit.hpp"

namespace ftz {

inline constexpr int kImageSide = 32;
inline constexpr int kNumKinds = 3;   // circle, square, triangle
inline constexpr int kNumColors = 6;  // red, green, blue, yellow, purple, orange

const std::string& kind_word(int kind);
const std::string& color_word(int color);

struct ShapeMeta {
  int kind = 0;
  int color = 0;
  int cx = 0, cy = 0;
  int radius = 0;  // half-extent; circles use it as the radius proper
};

struct SceneMeta {
  std::vector<ShapeMeta> shapes;
};

enum class Task { caption = 0, count = 1, exist = 2 };
const std::string& task_name(Task task);

enum class Split { train, eval };

struct SyntheticSample {
  Image image;
  std::vector<int> question_ids;
  std::vector<int> answer_ids;
  Task task;
  SceneMeta meta;
};

// Integer rasterization over a fixed background, no anti-aliasing. Circle by
// distance test, square and triangle by half-plane tests.
Image render(const SceneMeta& meta);

// Pure function of (seed, n, split). Train split cycles caption/count/exist;
// eval split cycles count/exist. Exist answers alternate yes/no so every
// even-sized exist subset is exactly balanced. Placement uses rejection
// sampling with a bounded retry count and falls back to a fresh scene
// sub-seed, never failing outward.
std::vector<SyntheticSample> generate_dataset(uint64_t seed, int n, Split split,
                                              const Tokenizer& tokenizer);

// Caption : count : exist sample ratio for a training mix.
struct TaskMix {
  int caption = 1;
  int count = 1;
  int exist = 1;
  int cycle() const { return caption + count + exist; }
};

// Deterministic reweighting of a train split: draws from per-task pools in
// the weight pattern, preserving each pool's order (and so the exist
// yes/no alternation). The stage-1 alignment mix leans on captions the way
// the LLaVA recipe does.
std::vector<SyntheticSample> generate_mixed_dataset(uint64_t seed, int n, TaskMix mix,
                                                    const Tokenizer& tokenizer);

// Binary dataset file: magic "FTZD"; u32 LE sample count; u64 LE vocabulary
// fingerprint; per sample u8 task, u16 question length + u16 ids, u16 answer
// length + u16 ids, u16 height, u16 width, raw RGB bytes. Scene metadata is
// not persisted.
void save_dataset(const std::string& path, const std::vector<SyntheticSample>& samples,
                  const Tokenizer& tokenizer);
std::vector<SyntheticSample> load_dataset(const std::string& path, const Tokenizer& tokenizer);

}  // namespace ftz
