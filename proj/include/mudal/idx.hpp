#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "mudal/data.hpp"

namespace mudal {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Single-domain image set read from an IDX pair. Pixels scaled to [0, 1].
struct IdxDataset {
  Matrix images;  // count x (rows * cols)
  std::vector<int> labels;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size())
    throw FormatError("idx: " + path + " truncated at byte offset " + std::to_string(offset) +
                      " (file has " + std::to_string(bytes.size()) + " bytes)");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_all(images_path);
  const auto lab = detail::read_all(labels_path);

  const auto img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImagesMagic)
    throw FormatError("idx: " + images_path + " bad magic at byte offset 0: expected 0x00000803");
  const auto count = detail::read_be32(img, 4, images_path);
  const auto rows = detail::read_be32(img, 8, images_path);
  const auto cols = detail::read_be32(img, 12, images_path);
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * pixels;
  if (img.size() < need)
    throw FormatError("idx: " + images_path + " truncated at byte offset " + std::to_string(img.size()) +
                      ", header promises " + std::to_string(need) + " bytes");

  const auto lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelsMagic)
    throw FormatError("idx: " + labels_path + " bad magic at byte offset 0: expected 0x00000801");
  const auto n_labels = detail::read_be32(lab, 4, labels_path);
  if (lab.size() < 8 + std::size_t{n_labels})
    throw FormatError("idx: " + labels_path + " truncated at byte offset " + std::to_string(lab.size()) +
                      ", header promises " + std::to_string(8 + std::size_t{n_labels}) + " bytes");
  if (n_labels != count)
    throw FormatError("idx: image count " + std::to_string(count) + " (byte offset 4 of " + images_path +
                      ") != label count " + std::to_string(n_labels) + " (byte offset 4 of " + labels_path + ")");

  IdxDataset out;
  out.rows = rows;
  out.cols = cols;
  out.images.resize(count, static_cast<Eigen::Index>(pixels));
  for (std::size_t s = 0; s < count; ++s)
    for (std::size_t p = 0; p < pixels; ++p)
      out.images(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p)) = img[16 + s * pixels + p] / 255.0;
  out.labels.resize(count);
  for (std::size_t s = 0; s < count; ++s) out.labels[s] = lab[8 + s];
  return out;
}

/// Writes an IDX image/label pair. Pixels are taken as raw bytes.
inline void write_idx(const std::string& images_path, const std::string& labels_path, std::size_t rows,
                      std::size_t cols, const std::vector<unsigned char>& pixels, const std::vector<unsigned char>& labels) {
  if (rows * cols == 0 || pixels.size() != labels.size() * rows * cols)
    throw InvalidArgument("write_idx: pixel buffer does not match count x rows x cols");
  std::ofstream img(images_path, std::ios::binary);
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(labels.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(rows));
  detail::put_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  std::ofstream lab(labels_path, std::ios::binary);
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!img || !lab) throw FormatError("write_idx: write failed");
}

/// Bilinear rotation of a row-major image about its centre; outside is 0.
inline Vector rotate_image(const Eigen::Ref<const Vector>& image, std::size_t rows, std::size_t cols, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double cy = (static_cast<double>(rows) - 1.0) / 2.0;
  const double cx = (static_cast<double>(cols) - 1.0) / 2.0;
  Vector out = Vector::Zero(image.size());
  auto at = [&](long y, long x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(rows) || x >= static_cast<long>(cols)) return 0.0;
    return image[y * static_cast<long>(cols) + x];
  };
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      // Inverse map: where does the output pixel come from?
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      const auto x0 = static_cast<long>(std::floor(sx));
      const auto y0 = static_cast<long>(std::floor(sy));
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      out[static_cast<Eigen::Index>(y * cols + x)] =
          (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    }
  }
  return out;
}

struct RotationPlan {
  std::size_t n_domains = 6;
  std::size_t train_per_domain = 400;
  std::size_t test_per_domain = 100;
  double angle_range_deg = 180.0;
  std::uint64_t seed = 0;
};

/// Reduced-scale rotated-image domains: images are shuffled, dealt to domains
/// and rotated by an angle uniform in the domain's sub-range.
inline MultiDomainDataset rotate_idx(const IdxDataset& raw, const RotationPlan& plan) {
  const std::size_t per = plan.train_per_domain + plan.test_per_domain;
  if (plan.n_domains == 0 || per == 0) throw InvalidArgument("rotate_idx: empty plan");
  if (raw.labels.size() < plan.n_domains * per)
    throw InvalidArgument("rotate_idx: need " + std::to_string(plan.n_domains * per) + " images, have " +
                          std::to_string(raw.labels.size()));
  int max_label = 0;
  for (int y : raw.labels) max_label = std::max(max_label, y);
  std::vector<std::size_t> order(raw.labels.size());
  for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
  Rng rng = make_rng(plan.seed, 31);
  shuffle(order, rng);
  RotatingSpec ranges;
  ranges.n_domains = plan.n_domains;
  ranges.angle_range_deg = plan.angle_range_deg;
  std::vector<DomainData> domains(plan.n_domains);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < plan.n_domains; ++i) {
    const auto [lo, hi] = domain_angle_range(ranges, i);
    auto fill = [&](std::size_t n, Matrix& x, std::vector<int>& y, std::vector<double>& ang) {
      x.resize(static_cast<Eigen::Index>(n), raw.images.cols());
      y.resize(n);
      ang.resize(n);
      for (std::size_t s = 0; s < n; ++s, ++cursor) {
        const auto src = order[cursor];
        ang[s] = lo + (hi - lo) * uniform01(rng);
        const Vector img = raw.images.row(static_cast<Eigen::Index>(src)).transpose();
        x.row(static_cast<Eigen::Index>(s)) = rotate_image(img, raw.rows, raw.cols, ang[s]).transpose();
        y[s] = raw.labels[src];
      }
    };
    fill(plan.train_per_domain, domains[i].train_x, domains[i].train_y, domains[i].train_angle);
    fill(plan.test_per_domain, domains[i].test_x, domains[i].test_y, domains[i].test_angle);
  }
  return MultiDomainDataset(std::move(domains), static_cast<std::size_t>(std::max(max_label + 1, 2)));
}

}  // namespace mudal
