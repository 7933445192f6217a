#include "catgrad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace catgrad {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw Error("idx: truncated file " + path);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}

}  // namespace

Tensor ImageBatch::flattened() const {
  return images.reshaped({size(), height() * width()});
}

ImageBatch ImageBatch::subset(std::size_t start, std::size_t count) const {
  if (start + count > size()) throw Error("subset: range out of bounds");
  std::size_t hw = height() * width();
  Tensor out({count, height(), width()});
  std::copy_n(images.data().begin() + start * hw, count * hw, out.data().begin());
  ImageBatch b{std::move(out), {}};
  if (has_labels()) {
    b.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(start),
                    labels.begin() + static_cast<std::ptrdiff_t>(start + count));
  }
  return b;
}

ImageBatch load_idx(const std::string& image_path, const std::optional<std::string>& label_path) {
  std::ifstream in(image_path, std::ios::binary);
  if (!in) throw Error("idx: cannot open " + image_path);
  std::uint32_t magic = read_be_u32(in, image_path);
  if (magic != kImageMagic) {
    throw Error("idx: bad image magic in " + image_path + " (got " + std::to_string(magic) + ")");
  }
  std::uint32_t n = read_be_u32(in, image_path);
  std::uint32_t h = read_be_u32(in, image_path);
  std::uint32_t w = read_be_u32(in, image_path);
  if (h == 0 || w == 0) throw Error("idx: zero image dimensions in " + image_path);
  std::vector<unsigned char> raw(static_cast<std::size_t>(n) * h * w);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw Error("idx: truncated pixel data in " + image_path);
  }
  Tensor images({n, h, w});
  for (std::size_t i = 0; i < raw.size(); ++i) images[i] = raw[i] / 255.0;
  ImageBatch batch{std::move(images), {}};

  if (label_path) {
    std::ifstream lin(*label_path, std::ios::binary);
    if (!lin) throw Error("idx: cannot open " + *label_path);
    if (read_be_u32(lin, *label_path) != kLabelMagic) {
      throw Error("idx: bad label magic in " + *label_path);
    }
    std::uint32_t ln = read_be_u32(lin, *label_path);
    if (ln != n) throw Error("idx: image/label count mismatch");
    std::vector<unsigned char> lraw(ln);
    if (!lin.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(ln))) {
      throw Error("idx: truncated label data in " + *label_path);
    }
    batch.labels.assign(lraw.begin(), lraw.end());
  }
  return batch;
}

void save_idx(const ImageBatch& batch, const std::string& image_path,
              const std::optional<std::string>& label_path) {
  std::ofstream out(image_path, std::ios::binary);
  if (!out) throw Error("idx: cannot write " + image_path);
  write_be_u32(out, kImageMagic);
  write_be_u32(out, static_cast<std::uint32_t>(batch.size()));
  write_be_u32(out, static_cast<std::uint32_t>(batch.height()));
  write_be_u32(out, static_cast<std::uint32_t>(batch.width()));
  for (double v : batch.images.data()) {
    double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
  }
  if (label_path) {
    if (!batch.has_labels()) throw Error("idx: batch has no labels to save");
    std::ofstream lout(*label_path, std::ios::binary);
    if (!lout) throw Error("idx: cannot write " + *label_path);
    write_be_u32(lout, kLabelMagic);
    write_be_u32(lout, static_cast<std::uint32_t>(batch.labels.size()));
    for (int label : batch.labels) lout.put(static_cast<char>(label));
  }
}

ImageBatch binarize_fixed(const ImageBatch& batch, double threshold) {
  ImageBatch out = batch;
  for (std::size_t i = 0; i < out.images.numel(); ++i) {
    out.images[i] = out.images[i] >= threshold ? 1.0 : 0.0;
  }
  return out;
}

ImageBatch binarize_dynamic(const ImageBatch& batch, RngStream& rng) {
  ImageBatch out = batch;
  for (std::size_t i = 0; i < out.images.numel(); ++i) {
    double p = out.images[i];
    if (!(p >= 0.0 && p <= 1.0)) throw Error("binarize_dynamic: pixel outside [0,1]");
    out.images[i] = rng.uniform() < p ? 1.0 : 0.0;
  }
  return out;
}

std::pair<ImageBatch, ImageBatch> split_halves(const ImageBatch& batch) {
  std::size_t h = batch.height();
  if (h % 2 != 0) throw Error("split_halves: image height must be even");
  std::size_t n = batch.size(), half = h / 2, w = batch.width();
  Tensor upper({n, half, w});
  Tensor lower({n, half, w});
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = batch.images.data().data() + i * h * w;
    std::copy_n(src, half * w, upper.data().data() + i * half * w);
    std::copy_n(src + half * w, half * w, lower.data().data() + i * half * w);
  }
  ImageBatch up{std::move(upper), batch.labels};
  ImageBatch lo{std::move(lower), batch.labels};
  return {std::move(up), std::move(lo)};
}

ImageBatch concat_halves(const ImageBatch& upper, const ImageBatch& lower) {
  if (upper.size() != lower.size() || upper.width() != lower.width()) {
    throw Error("concat_halves: shape mismatch");
  }
  std::size_t n = upper.size(), hu = upper.height(), hl = lower.height(), w = upper.width();
  Tensor out({n, hu + hl, w});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(upper.images.data().data() + i * hu * w, hu * w,
                out.data().data() + i * (hu + hl) * w);
    std::copy_n(lower.images.data().data() + i * hl * w, hl * w,
                out.data().data() + i * (hu + hl) * w + hu * w);
  }
  return ImageBatch{std::move(out), upper.labels};
}

ImageBatch downsample(const ImageBatch& batch, std::size_t target) {
  if (target == 0) throw Error("downsample: target must be positive");
  std::size_t h = batch.height(), w = batch.width();
  std::size_t padded = target;
  while (padded < std::max(h, w)) padded *= 2;
  std::size_t top = (padded - h) / 2, left = (padded - w) / 2;
  std::size_t n = batch.size();

  Tensor canvas({n, padded, padded});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        canvas[(i * padded + top + r) * padded + left + c] = batch.images[(i * h + r) * w + c];
      }
    }
  }

  std::size_t cur = padded;
  while (cur > target) {
    std::size_t next = cur / 2;
    Tensor smaller({n, next, next});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < next; ++r) {
        for (std::size_t c = 0; c < next; ++c) {
          double s = canvas[(i * cur + 2 * r) * cur + 2 * c] +
                     canvas[(i * cur + 2 * r) * cur + 2 * c + 1] +
                     canvas[(i * cur + 2 * r + 1) * cur + 2 * c] +
                     canvas[(i * cur + 2 * r + 1) * cur + 2 * c + 1];
          smaller[(i * next + r) * next + c] = s / 4.0;
        }
      }
    }
    canvas = std::move(smaller);
    cur = next;
  }
  return ImageBatch{std::move(canvas), batch.labels};
}

SyntheticKind synthetic_kind_from_name(const std::string& name) {
  if (name == "stripes") return SyntheticKind::Stripes;
  if (name == "random_bernoulli") return SyntheticKind::RandomBernoulli;
  if (name == "blobs") return SyntheticKind::Blobs;
  throw Error("unknown synthetic kind: " + name);
}

ImageBatch synthetic_batch(SyntheticKind kind, std::size_t n, std::size_t height,
                           std::size_t width, RngStream& rng) {
  Tensor images({n, height, width});
  for (std::size_t i = 0; i < n; ++i) {
    double* img = images.data().data() + i * height * width;
    switch (kind) {
      case SyntheticKind::Stripes: {
        std::size_t period = 2 + rng.uniform_int(4);
        std::size_t phase = rng.uniform_int(period);
        for (std::size_t r = 0; r < height; ++r) {
          double v = (r + phase) % period < (period + 1) / 2 ? 1.0 : 0.0;
          for (std::size_t c = 0; c < width; ++c) img[r * width + c] = v;
        }
        break;
      }
      case SyntheticKind::RandomBernoulli: {
        for (std::size_t p = 0; p < height * width; ++p) img[p] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        break;
      }
      case SyntheticKind::Blobs: {
        std::size_t blobs = 1 + rng.uniform_int(3);
        for (std::size_t b = 0; b < blobs; ++b) {
          double cy = rng.uniform() * static_cast<double>(height);
          double cx = rng.uniform() * static_cast<double>(width);
          double s = 1.0 + rng.uniform() * static_cast<double>(std::min(height, width)) / 4.0;
          for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
              double dy = (static_cast<double>(r) - cy) / s;
              double dx = (static_cast<double>(c) - cx) / s;
              img[r * width + c] =
                  std::min(1.0, img[r * width + c] + std::exp(-0.5 * (dy * dy + dx * dx)));
            }
          }
        }
        break;
      }
    }
  }
  return ImageBatch{std::move(images), {}};
}

void assign_random_labels(ImageBatch& batch, std::size_t k, RngStream& rng) {
  if (k == 0) throw Error("assign_random_labels: k must be positive");
  batch.labels.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch.labels[i] = static_cast<int>(rng.uniform_int(k));
  }
}

namespace {

// Seven-segment digit prototypes on a 7x5 cell grid.
// Segments: 0 top, 1 top-left, 2 top-right, 3 middle, 4 bottom-left,
// 5 bottom-right, 6 bottom.
constexpr unsigned char kDigitSegments[10] = {
    0b1110111,  // 0
    0b0100100,  // 1
    0b1011101,  // 2
    0b1101101,  // 3
    0b0101110,  // 4
    0b1101011,  // 5
    0b1111011,  // 6
    0b0100101,  // 7
    0b1111111,  // 8
    0b1101111,  // 9
};

void paint_cell(double* img, std::size_t stride, std::size_t row, std::size_t col) {
  // 3x3 pixels per grid cell
  for (std::size_t dr = 0; dr < 3; ++dr) {
    for (std::size_t dc = 0; dc < 3; ++dc) {
      img[(row * 3 + dr) * stride + col * 3 + dc] = 1.0;
    }
  }
}

void render_digit(double* img, std::size_t stride, int digit) {
  unsigned char seg = kDigitSegments[digit];
  auto on = [&](int s) { return (seg >> s) & 1; };
  for (std::size_t c = 1; c <= 3; ++c) {
    if (on(0)) paint_cell(img, stride, 0, c);
    if (on(3)) paint_cell(img, stride, 3, c);
    if (on(6)) paint_cell(img, stride, 6, c);
  }
  for (std::size_t r = 1; r <= 2; ++r) {
    if (on(1)) paint_cell(img, stride, r, 0);
    if (on(2)) paint_cell(img, stride, r, 4);
  }
  for (std::size_t r = 4; r <= 5; ++r) {
    if (on(4)) paint_cell(img, stride, r, 0);
    if (on(5)) paint_cell(img, stride, r, 4);
  }
}

}  // namespace

ImageBatch make_fixture(std::size_t n, RngStream& rng) {
  const std::size_t size = 28;
  const std::size_t glyph = 21;  // 7 cells * 3 px
  Tensor images({n, size, size});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    int label = static_cast<int>(i % 10);
    labels[i] = label;
    std::vector<double> canvas(glyph * 15, 0.0);
    render_digit(canvas.data(), 15, label);
    // jittered placement
    std::size_t top = 2 + rng.uniform_int(5);
    std::size_t left = 4 + rng.uniform_int(7);
    double* img = images.data().data() + i * size * size;
    for (std::size_t r = 0; r < glyph; ++r) {
      for (std::size_t c = 0; c < 15; ++c) {
        if (canvas[r * 15 + c] > 0 && top + r < size && left + c < size) {
          img[(top + r) * size + left + c] = 0.75 + 0.25 * rng.uniform();
        }
      }
    }
    // sparse pepper noise keeps pixels from being deterministic
    for (int p = 0; p < 8; ++p) {
      std::size_t idx = rng.uniform_int(size * size);
      img[idx] = std::min(1.0, img[idx] + 0.6 * rng.uniform());
    }
  }
  return ImageBatch{std::move(images), std::move(labels)};
}

}  // namespace catgrad
