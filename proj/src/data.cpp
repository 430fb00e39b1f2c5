#include "ftz/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <memory>

#include "ftz/rng.hpp"

namespace ftz {

namespace {

const std::array<std::string, kNumKinds> kKindWords = {"circle", "square", "triangle"};
const std::array<std::string, kNumColors> kColorWords = {"red",    "green",  "blue",
                                                         "yellow", "purple", "orange"};
const std::array<std::array<uint8_t, 3>, kNumColors> kPalette = {{
    {200, 30, 30},
    {30, 180, 40},
    {40, 60, 220},
    {235, 220, 40},
    {160, 40, 210},
    {245, 150, 30},
}};
constexpr std::array<uint8_t, 3> kBackground = {20, 20, 25};
constexpr int kPlacementRetries = 1000;

bool inside_shape(const ShapeMeta& s, int x, int y) {
  const int dx = x - s.cx;
  const int dy = y - s.cy;
  switch (s.kind) {
    case 0:  // circle: distance test
      return dx * dx + dy * dy <= s.radius * s.radius;
    case 1:  // square: two half-plane pairs
      return std::abs(dx) <= s.radius && std::abs(dy) <= s.radius;
    default: {
      // triangle with apex up: A=(cx,cy-r), B=(cx-r,cy+r), C=(cx+r,cy+r);
      // inside iff the point is on the non-negative side of all three edges.
      const int ax = s.cx, ay = s.cy - s.radius;
      const int bx = s.cx - s.radius, by = s.cy + s.radius;
      const int cx = s.cx + s.radius, cy = s.cy + s.radius;
      const long e1 = static_cast<long>(bx - ax) * (y - ay) - static_cast<long>(by - ay) * (x - ax);
      const long e2 = static_cast<long>(cx - bx) * (y - by) - static_cast<long>(cy - by) * (x - bx);
      const long e3 = static_cast<long>(ax - cx) * (y - cy) - static_cast<long>(ay - cy) * (x - cx);
      return e1 >= 0 && e2 >= 0 && e3 >= 0;
    }
  }
}

// Half-extent boxes may touch even when euclidean centers are r1+r2 apart,
// so placement keeps centers further than (r1+r2)*sqrt(2), which guarantees
// disjoint pixel sets for every shape kind.
bool far_enough(const ShapeMeta& a, const ShapeMeta& b) {
  const long dx = a.cx - b.cx;
  const long dy = a.cy - b.cy;
  const long rsum = a.radius + b.radius;
  return dx * dx + dy * dy > 2 * rsum * rsum;
}

SceneMeta generate_scene(uint64_t scene_seed, int n_shapes) {
  for (uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(scene_seed, attempt));
    SceneMeta meta;
    bool ok = true;
    for (int i = 0; i < n_shapes && ok; ++i) {
      bool placed = false;
      for (int retry = 0; retry < kPlacementRetries; ++retry) {
        ShapeMeta s;
        s.kind = rng.uniform_int(0, kNumKinds - 1);
        s.color = rng.uniform_int(0, kNumColors - 1);
        s.radius = rng.uniform_int(2, n_shapes <= 3 ? 4 : 3);
        s.cx = rng.uniform_int(s.radius, kImageSide - 1 - s.radius);
        s.cy = rng.uniform_int(s.radius, kImageSide - 1 - s.radius);
        bool clear = true;
        for (const ShapeMeta& other : meta.shapes) {
          if (!far_enough(s, other)) {
            clear = false;
            break;
          }
        }
        if (clear) {
          meta.shapes.push_back(s);
          placed = true;
          break;
        }
      }
      ok = placed;
    }
    if (ok) return meta;
  }
}

struct PairSet {
  // distinct (color, kind) pairs present in a scene, in first-seen order
  std::vector<std::pair<int, int>> pairs;
  bool contains(int color, int kind) const {
    for (const auto& p : pairs) {
      if (p.first == color && p.second == kind) return true;
    }
    return false;
  }
};

PairSet present_pairs(const SceneMeta& meta) {
  PairSet set;
  for (const ShapeMeta& s : meta.shapes) {
    if (!set.contains(s.color, s.kind)) set.pairs.emplace_back(s.color, s.kind);
  }
  return set;
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_ids(std::vector<uint8_t>& out, const std::vector<int>& ids) {
  put_u16(out, static_cast<uint16_t>(ids.size()));
  for (int id : ids) put_u16(out, static_cast<uint16_t>(id));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

const std::string& kind_word(int kind) { return kKindWords.at(static_cast<size_t>(kind)); }
const std::string& color_word(int color) { return kColorWords.at(static_cast<size_t>(color)); }

const std::string& task_name(Task task) {
  static const std::array<std::string, 3> names = {"caption", "count", "exist"};
  return names.at(static_cast<size_t>(task));
}

Image render(const SceneMeta& meta) {
  for (const ShapeMeta& s : meta.shapes) {
    if (s.cx - s.radius < 0 || s.cx + s.radius >= kImageSide || s.cy - s.radius < 0 ||
        s.cy + s.radius >= kImageSide || s.radius < 1) {
      throw InputError("render: shape out of bounds at (" + std::to_string(s.cx) + "," +
                       std::to_string(s.cy) + ") r=" + std::to_string(s.radius));
    }
    if (s.kind < 0 || s.kind >= kNumKinds || s.color < 0 || s.color >= kNumColors) {
      throw InputError("render: bad kind/color in scene meta");
    }
  }
  Image image;
  image.height = image.width = kImageSide;
  image.pixels.resize(static_cast<size_t>(kImageSide) * kImageSide * 3);
  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      uint8_t* px = &image.pixels[(static_cast<size_t>(y) * kImageSide + x) * 3];
      px[0] = kBackground[0];
      px[1] = kBackground[1];
      px[2] = kBackground[2];
      for (const ShapeMeta& s : meta.shapes) {
        if (inside_shape(s, x, y)) {
          const auto& rgb = kPalette[static_cast<size_t>(s.color)];
          px[0] = rgb[0];
          px[1] = rgb[1];
          px[2] = rgb[2];
          break;
        }
      }
    }
  }
  return image;
}

std::vector<SyntheticSample> generate_dataset(uint64_t seed, int n, Split split,
                                              const Tokenizer& tokenizer) {
  if (n < 1) throw InputError("generate_dataset: n must be >= 1");
  const uint64_t split_seed = derive_seed(seed, split == Split::train ? "train" : "eval");
  std::vector<SyntheticSample> samples;
  samples.reserve(static_cast<size_t>(n));
  for (int idx = 0; idx < n; ++idx) {
    Task task;
    int exist_ordinal = 0;
    if (split == Split::train) {
      task = static_cast<Task>(idx % 3);
      exist_ordinal = idx / 3;
    } else {
      task = idx % 2 == 0 ? Task::count : Task::exist;
      exist_ordinal = idx / 2;
    }
    const uint64_t sample_seed = derive_seed(split_seed, static_cast<uint64_t>(idx));
    Rng rng(derive_seed(sample_seed, "question"));
    const int n_shapes = rng.uniform_int(1, 6);
    SceneMeta meta = generate_scene(derive_seed(sample_seed, "scene"), n_shapes);

    SyntheticSample sample;
    sample.task = task;
    sample.meta = meta;
    sample.image = render(meta);
    const PairSet present = present_pairs(meta);
    switch (task) {
      case Task::caption: {
        const auto& pick =
            present.pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(present.pairs.size()) - 1))];
        int count = 0;
        for (const ShapeMeta& s : meta.shapes) {
          if (s.color == pick.first && s.kind == pick.second) ++count;
        }
        sample.question_ids = tokenizer.encode("describe the image");
        sample.answer_ids = tokenizer.encode("there are " + std::to_string(count) + " " +
                                             color_word(pick.first) + " " + kind_word(pick.second));
        break;
      }
      case Task::count: {
        const int kind = rng.uniform_int(0, kNumKinds - 1);
        int count = 0;
        for (const ShapeMeta& s : meta.shapes) {
          if (s.kind == kind) ++count;
        }
        sample.question_ids = tokenizer.encode("how many " + kind_word(kind) + " ?");
        sample.answer_ids = tokenizer.encode(std::to_string(count));
        break;
      }
      case Task::exist: {
        const bool want_yes = exist_ordinal % 2 == 0;
        int color = 0, kind = 0;
        if (want_yes) {
          const auto& pick = present.pairs[static_cast<size_t>(
              rng.uniform_int(0, static_cast<int>(present.pairs.size()) - 1))];
          color = pick.first;
          kind = pick.second;
        } else {
          std::vector<std::pair<int, int>> absent;
          for (int c = 0; c < kNumColors; ++c) {
            for (int k = 0; k < kNumKinds; ++k) {
              if (!present.contains(c, k)) absent.emplace_back(c, k);
            }
          }
          const auto& pick =
              absent[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(absent.size()) - 1))];
          color = pick.first;
          kind = pick.second;
        }
        sample.question_ids =
            tokenizer.encode("is there a " + color_word(color) + " " + kind_word(kind) + " ?");
        sample.answer_ids = tokenizer.encode(want_yes ? "yes" : "no");
        break;
      }
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<SyntheticSample> generate_mixed_dataset(uint64_t seed, int n, TaskMix mix,
                                                    const Tokenizer& tokenizer) {
  if (mix.caption < 0 || mix.count < 0 || mix.exist < 0 || mix.cycle() < 1) {
    throw ConfigurationError("generate_mixed_dataset: mix weights must be non-negative, sum >= 1");
  }
  int needed[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    const int r = i % mix.cycle();
    needed[r < mix.caption ? 0 : (r < mix.caption + mix.count ? 1 : 2)] += 1;
  }
  // The train split yields equal thirds, so a pool of 3x the largest
  // per-task demand covers every weighting.
  const int pool_n = 3 * std::max({needed[0], needed[1], needed[2], 1});
  std::vector<SyntheticSample> pool = generate_dataset(seed, pool_n, Split::train, tokenizer);
  std::vector<SyntheticSample> by_task[3];
  for (SyntheticSample& s : pool) by_task[static_cast<int>(s.task)].push_back(std::move(s));
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(n));
  size_t cursor[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    const int r = i % mix.cycle();
    const int task = r < mix.caption ? 0 : (r < mix.caption + mix.count ? 1 : 2);
    out.push_back(by_task[task][cursor[task]++]);
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<SyntheticSample>& samples,
                  const Tokenizer& tokenizer) {
  std::vector<uint8_t> bytes;
  const char magic[4] = {'F', 'T', 'Z', 'D'};
  bytes.insert(bytes.end(), magic, magic + 4);
  const uint32_t count = static_cast<uint32_t>(samples.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>((count >> (8 * i)) & 0xff));
  const uint64_t fp = tokenizer.fingerprint();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>((fp >> (8 * i)) & 0xff));
  for (const SyntheticSample& s : samples) {
    bytes.push_back(static_cast<uint8_t>(s.task));
    put_ids(bytes, s.question_ids);
    put_ids(bytes, s.answer_ids);
    put_u16(bytes, static_cast<uint16_t>(s.image.height));
    put_u16(bytes, static_cast<uint16_t>(s.image.width));
    bytes.insert(bytes.end(), s.image.pixels.begin(), s.image.pixels.end());
  }
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw IoError("short write: " + path);
  }
}

std::vector<SyntheticSample> load_dataset(const std::string& path, const Tokenizer& tokenizer) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> bytes;
  uint8_t buffer[1 << 16];
  size_t got = 0;
  while ((got = std::fread(buffer, 1, sizeof(buffer), f.get())) > 0) {
    bytes.insert(bytes.end(), buffer, buffer + got);
  }
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > bytes.size()) throw InputError("truncated dataset file: " + path);
  };
  auto u16 = [&]() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  };
  need(4);
  if (std::memcmp(bytes.data(), "FTZD", 4) != 0) throw InputError("bad magic in dataset file: " + path);
  pos = 4;
  need(4);
  uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
  pos += 4;
  need(8);
  uint64_t fp = 0;
  for (int i = 0; i < 8; ++i) fp |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
  pos += 8;
  if (fp != tokenizer.fingerprint()) {
    throw ConfigurationError("vocabulary mismatch between dataset " + path + " and tokenizer");
  }
  std::vector<SyntheticSample> samples;
  samples.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    SyntheticSample s;
    need(1);
    const uint8_t task = bytes[pos++];
    if (task > 2) throw InputError("bad task tag in dataset file: " + path);
    s.task = static_cast<Task>(task);
    const uint16_t qlen = u16();
    for (uint16_t t = 0; t < qlen; ++t) s.question_ids.push_back(u16());
    const uint16_t alen = u16();
    for (uint16_t t = 0; t < alen; ++t) s.answer_ids.push_back(u16());
    s.image.height = u16();
    s.image.width = u16();
    const size_t pixel_count = static_cast<size_t>(s.image.height) * s.image.width * 3;
    need(pixel_count);
    s.image.pixels.assign(bytes.begin() + static_cast<long>(pos),
                          bytes.begin() + static_cast<long>(pos + pixel_count));
    pos += pixel_count;
    samples.push_back(std::move(s));
  }
  if (pos != bytes.size()) throw InputError("trailing bytes in dataset file: " + path);
  return samples;
}

}  // namespace ftz
