#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "droidlens/error.hpp"
#include "droidlens/gui_model.hpp"
#include "droidlens/log.hpp"
#include "droidlens/raster.hpp"
#include "droidlens/text.hpp"

namespace droidlens {

struct AnnotationStyle {
  Rgb click{230, 0, 0};
  Rgb input{0, 70, 240};
  Rgb long_click{140, 0, 200};
  Rgb check{255, 105, 180};
  Rgb scroll{245, 210, 0};
  int stroke_width = 4;
  /// Glyph cell height in pixels; the 5x7 font is scaled to the nearest multiple of 7.
  int label_font_size = 28;

  Rgb color(ActionKind k) const noexcept {
    switch (k) {
      case ActionKind::Click: return click;
      case ActionKind::Input: return input;
      case ActionKind::LongClick: return long_click;
      case ActionKind::Check: return check;
      case ActionKind::Scroll: return scroll;
    }
    return click;
  }

  int glyph_scale() const noexcept { return std::max(1, label_font_size / font::kGlyphHeight); }
};

/// Marker for the acted widget in history screenshots; outside the five kind colors.
inline constexpr Rgb kActedMarkerColor{0, 230, 64};
inline constexpr Rgb kBadgeText{255, 255, 255};

struct LabelEntry {
  int numeral = 0;
  int node_index = 0;
  std::string widget_text;
  bool labeled = false;
  ActionKind kind = ActionKind::Click;
  Bounds bounds;

  friend bool operator==(const LabelEntry&, const LabelEntry&) = default;
};

struct LabelMap {
  std::vector<LabelEntry> entries;

  const LabelEntry* by_numeral(int numeral) const {
    if (numeral < 1 || numeral > static_cast<int>(entries.size())) return nullptr;
    return &entries[static_cast<std::size_t>(numeral - 1)];
  }

  const LabelEntry* by_node(int node_index) const {
    for (const auto& e : entries)
      if (e.node_index == node_index) return &e;
    return nullptr;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct AnnotatedScreenshot {
  Raster image;
  LabelMap label_map;
  int row_count = 0;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Spatial ordering

namespace detail {

inline bool center_within(const Bounds& a, const Bounds& b) {
  const int c = a.center_y();
  return c >= b.top && c <= b.bottom;
}

inline bool same_row(const Bounds& a, const Bounds& b) {
  return center_within(a, b) && center_within(b, a);
}

}  // namespace detail

/// Rows are connected components of the mutual-center-containment relation.
/// Input order is kept inside each row; rows are ordered by first member.
inline std::vector<std::vector<Widget>> group_rows(const std::vector<Widget>& widgets) {
  const std::size_t n = widgets.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (detail::same_row(widgets[i].bounds, widgets[j].bounds)) {
        const auto a = find(i), b = find(j);
        parent[std::max(a, b)] = std::min(a, b);
      }

  std::vector<std::vector<Widget>> rows;
  std::vector<std::ptrdiff_t> row_of(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    if (row_of[r] < 0) {
      row_of[r] = static_cast<std::ptrdiff_t>(rows.size());
      rows.emplace_back();
    }
    rows[static_cast<std::size_t>(row_of[r])].push_back(widgets[i]);
  }
  return rows;
}

namespace detail {

inline std::vector<std::vector<Widget>> ordered_rows(std::vector<Widget> widgets) {
  std::stable_sort(widgets.begin(), widgets.end(), [](const Widget& a, const Widget& b) {
    if (a.bounds.top != b.bounds.top) return a.bounds.top < b.bounds.top;
    if (a.bounds.left != b.bounds.left) return a.bounds.left < b.bounds.left;
    return a.node_index < b.node_index;
  });
  auto rows = group_rows(widgets);
  for (auto& row : rows)
    std::stable_sort(row.begin(), row.end(), [](const Widget& a, const Widget& b) {
      if (a.bounds.left != b.bounds.left) return a.bounds.left < b.bounds.left;
      return a.node_index < b.node_index;
    });
  return rows;
}

inline std::vector<Widget> actionable_only(const GuiPage& page) {
  std::vector<Widget> out;
  for (auto& aw : actionable_widgets(page)) out.push_back(std::move(aw.widget));
  return out;
}

}  // namespace detail

/// Actionable widgets top-to-bottom by row, left-to-right within a row.
inline std::vector<Widget> order_widgets(const GuiPage& page) {
  std::vector<Widget> out;
  for (auto& row : detail::ordered_rows(detail::actionable_only(page)))
    for (auto& w : row) out.push_back(std::move(w));
  return out;
}

// ---------------------------------------------------------------------------
// Painting

inline void paint_badge(Raster& img, const Bounds& b, int numeral, Rgb color,
                        const AnnotationStyle& style) {
  const std::string digits = std::to_string(numeral);
  const int scale = style.glyph_scale();
  const int pad = scale;
  const int w = font::text_width(digits.size(), scale) + 2 * pad;
  const int h = font::kGlyphHeight * scale + 2 * pad;
  const int x0 = b.left + style.stroke_width;
  const int y0 = b.top + style.stroke_width;
  fill_rect(img, x0, y0, x0 + w, y0 + h, color);
  draw_text(img, x0 + pad, y0 + pad, digits, kBadgeText, scale);
}

/// Boxes every actionable widget in its priority color, numbers all of them in
/// spatial order and paints the numeral on row heads only.
inline AnnotatedScreenshot annotate(const Raster& image, const GuiPage& page,
                                    const AnnotationStyle& style = {}) {
  AnnotatedScreenshot out;
  out.image = image;

  std::vector<Widget> candidates;
  for (auto& aw : actionable_widgets(page)) {
    const Bounds& b = aw.widget.bounds;
    const bool outside = b.left >= image.width() || b.top >= image.height();
    if (outside) {
      out.warnings.push_back("widget " + std::to_string(aw.widget.node_index) + " " + to_string(b) +
                             " lies outside the " + std::to_string(image.width()) + "x" +
                             std::to_string(image.height()) + " screenshot; not annotated");
      log::warn(out.warnings.back());
      continue;
    }
    if (b.right > image.width() || b.bottom > image.height())
      throw Error(ErrorCode::RasterMismatch, "widget " + std::to_string(aw.widget.node_index) + " " +
                                                 to_string(b) + " exceeds " +
                                                 std::to_string(image.width()) + "x" +
                                                 std::to_string(image.height()));
    candidates.push_back(aw.widget);
  }

  const auto rows = detail::ordered_rows(std::move(candidates));
  out.row_count = static_cast<int>(rows.size());
  int numeral = 1;
  for (const auto& row : rows) {
    bool head = true;
    for (const auto& w : row) {
      const ActionKind kind = action_kinds(w).primary();
      out.label_map.entries.push_back(
          {numeral, w.node_index, widget_label_text(w), head, kind, w.bounds});
      stroke_rect(out.image, w.bounds.left, w.bounds.top, w.bounds.right, w.bounds.bottom,
                  style.color(kind), style.stroke_width);
      ++numeral;
      head = false;
    }
  }
  for (const auto& e : out.label_map.entries)
    if (e.labeled) paint_badge(out.image, e.bounds, e.numeral, style.color(e.kind), style);
  return out;
}

/// Copy of the annotated image with the acted widget re-stroked in the marker color.
inline Raster mark_acted(const Raster& annotated, const Bounds& acted, const AnnotationStyle& style = {}) {
  Raster out = annotated;
  stroke_rect(out, acted.left, acted.top, acted.right, acted.bottom, kActedMarkerColor,
              style.stroke_width);
  return out;
}

// ---------------------------------------------------------------------------
// Alignment validation

struct LabelMatch {
  int node_index;
};
struct LabelMismatch {
  std::string expected_text;
};
struct UnknownLabel {};

using LabelResolution = std::variant<LabelMatch, LabelMismatch, UnknownLabel>;

inline std::string normalize_for_compare(std::string_view s) { return text::lower(text::collapse_ws(s)); }

inline LabelResolution resolve_label(const LabelMap& map, int numeral, std::string_view claimed_text) {
  const LabelEntry* e = map.by_numeral(numeral);
  if (!e) return UnknownLabel{};
  if (e->widget_text.empty() || normalize_for_compare(e->widget_text) == normalize_for_compare(claimed_text))
    return LabelMatch{e->node_index};
  return LabelMismatch{e->widget_text};
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const LabelEntry& e) {
  j = {{"numeral", e.numeral}, {"node_index", e.node_index}, {"widget_text", e.widget_text},
       {"labeled", e.labeled},  {"kind", to_string(e.kind)},  {"bounds", e.bounds}};
}

inline void from_json(const nlohmann::json& j, LabelEntry& e) {
  e.numeral = j.at("numeral").get<int>();
  e.node_index = j.at("node_index").get<int>();
  e.widget_text = j.value("widget_text", "");
  e.labeled = j.value("labeled", false);
  e.kind = parse_action_kind(j.value("kind", "click")).value_or(ActionKind::Click);
  e.bounds = j.at("bounds").get<Bounds>();
}

inline void to_json(nlohmann::json& j, const LabelMap& m) { j = m.entries; }
inline void from_json(const nlohmann::json& j, LabelMap& m) { m.entries = j.get<std::vector<LabelEntry>>(); }

}  // namespace droidlens
