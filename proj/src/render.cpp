#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"

namespace chartmix::synth {

namespace {

constexpr int kCanvas = 490;
constexpr double kPlotX0 = 60, kPlotX1 = 470, kPlotY0 = 50, kPlotY1 = 430;

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  std::array<std::uint8_t, 3> arr() const { return {r, g, b}; }
};

Color parse_color(const std::string& hex) {
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    return c - 'a' + 10;
  };
  Color c;
  c.r = static_cast<std::uint8_t>(nib(hex[1]) * 16 + nib(hex[2]));
  c.g = static_cast<std::uint8_t>(nib(hex[3]) * 16 + nib(hex[4]));
  c.b = static_cast<std::uint8_t>(nib(hex[5]) * 16 + nib(hex[6]));
  return c;
}

std::string color_hex(Color c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

// Per-slice shade for single-palette pies: blend toward white.
Color shade(Color base, double toward_white) {
  auto mix = [toward_white](std::uint8_t v) {
    return static_cast<std::uint8_t>(
        std::lround(v + (255.0 - v) * toward_white));
  };
  return Color{mix(base.r), mix(base.g), mix(base.b)};
}

const Color kAxisColor{51, 51, 51};
const Color kGridColor{204, 204, 204};
const Color kTextColor{51, 51, 51};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raster primitives
// ---------------------------------------------------------------------------

void fill_rect_r(Raster& img, double x0, double y0, double x1, double y1, Color c) {
  const int ix0 = std::max(0, static_cast<int>(std::lround(std::min(x0, x1))));
  const int ix1 = std::min(img.width - 1, static_cast<int>(std::lround(std::max(x0, x1))));
  const int iy0 = std::max(0, static_cast<int>(std::lround(std::min(y0, y1))));
  const int iy1 = std::min(img.height - 1, static_cast<int>(std::lround(std::max(y0, y1))));
  for (int y = iy0; y <= iy1; ++y)
    for (int x = ix0; x <= ix1; ++x) img.set_pixel(x, y, c.arr());
}

void fill_circle_r(Raster& img, double cx, double cy, double radius, Color c) {
  const int x0 = static_cast<int>(std::floor(cx - radius));
  const int x1 = static_cast<int>(std::ceil(cx + radius));
  const int y0 = static_cast<int>(std::floor(cy - radius));
  const int y1 = static_cast<int>(std::ceil(cy + radius));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) img.set_pixel(x, y, c.arr());
    }
}

void fill_diamond_r(Raster& img, double cx, double cy, double radius, Color c) {
  const int x0 = static_cast<int>(std::floor(cx - radius));
  const int x1 = static_cast<int>(std::ceil(cx + radius));
  const int y0 = static_cast<int>(std::floor(cy - radius));
  const int y1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (std::abs(x - cx) + std::abs(y - cy) <= radius) img.set_pixel(x, y, c.arr());
}

// Thick segment with an on/off pattern applied along the pixel parameter.
void draw_line_r(Raster& img, double x0, double y0, double x1, double y1, Color c,
                 double thickness, double dash_on = 0.0, double dash_off = 0.0) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len = std::max(1.0, std::hypot(dx, dy));
  const int steps = static_cast<int>(std::ceil(len));
  const double half = thickness / 2.0;
  const double period = dash_on + dash_off;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    if (period > 0.0) {
      const double phase = std::fmod(t * len, period);
      if (phase >= dash_on) continue;
    }
    fill_rect_r(img, x0 + t * dx - half, y0 + t * dy - half, x0 + t * dx + half,
                y0 + t * dy + half, c);
  }
}

void fill_wedge_r(Raster& img, double cx, double cy, double radius, double a0,
                  double a1, Color c) {
  const double span = a1 - a0;
  if (span <= 0.0) return;
  const int x0 = static_cast<int>(std::floor(cx - radius));
  const int x1 = static_cast<int>(std::ceil(cx + radius));
  const int y0 = static_cast<int>(std::floor(cy - radius));
  const int y1 = static_cast<int>(std::ceil(cy + radius));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > r2) continue;
      double phi = std::atan2(dy, dx) - a0;
      phi = std::fmod(phi + 4.0 * M_PI, 2.0 * M_PI);
      if (phi <= span) img.set_pixel(x, y, c.arr());
    }
}

// Crude glyph blocks: one filled cell per non-space character. Enough spatial
// signal for the patch encoder; the SVG carries the real text.
void draw_text_r(Raster& img, double x, double y, const std::string& text,
                 int size, char anchor, Color c) {
  const double cw = size * 0.6;
  const double width = cw * static_cast<double>(text.size());
  double left = x;
  if (anchor == 'm') left = x - width / 2.0;
  if (anchor == 'e') left = x - width;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == ' ') continue;
    const double cx0 = left + cw * static_cast<double>(i);
    fill_rect_r(img, cx0 + 1, y - size + 2, cx0 + cw - 1, y - 1, c);
  }
}

// ---------------------------------------------------------------------------
// SVG text helpers
// ---------------------------------------------------------------------------

const char* anchor_name(char a) {
  if (a == 'm') return "middle";
  if (a == 'e') return "end";
  return "start";
}

std::string svg_text(double x, double y, const std::string& text, int size,
                     char anchor, Color color) {
  std::ostringstream out;
  out << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\""
      << size << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor_name(anchor)
      << "\" fill=\"" << color_hex(color) << "\">" << esc(text) << "</text>";
  return out.str();
}

std::string svg_line(double x0, double y0, double x1, double y1, Color c,
                     double width, const std::string& dash = "") {
  std::ostringstream out;
  out << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x1)
      << "\" y2=\"" << fmt(y1) << "\" stroke=\"" << color_hex(c)
      << "\" stroke-width=\"" << fmt(width) << "\"";
  if (!dash.empty()) out << " stroke-dasharray=\"" << dash << "\"";
  out << "/>";
  return out.str();
}

struct Layout {
  double vmax = 1.0;  // top of the value axis
  std::size_t ticks = 5;
  double tick_value(std::size_t i) const {
    return vmax * static_cast<double>(i) / static_cast<double>(ticks - 1);
  }
};

Layout make_layout(const MetaTable& table) {
  double vmax = 0.0;
  for (const auto& row : table.values)
    for (double v : row) vmax = std::max(vmax, v);
  Layout lay;
  lay.vmax = vmax > 0.0 ? vmax * 1.05 : 1.0;
  return lay;
}

double value_to_y(const Layout& lay, double v) {
  return kPlotY1 - (v / lay.vmax) * (kPlotY1 - kPlotY0);
}

double value_to_x(const Layout& lay, double v) {
  return kPlotX0 + (v / lay.vmax) * (kPlotX1 - kPlotX0);
}

double category_center_x(std::size_t r, std::size_t rows) {
  return kPlotX0 + (static_cast<double>(r) + 0.5) * (kPlotX1 - kPlotX0) /
                       static_cast<double>(rows);
}

double category_center_y(std::size_t r, std::size_t rows) {
  return kPlotY0 + (static_cast<double>(r) + 0.5) * (kPlotY1 - kPlotY0) /
                       static_cast<double>(rows);
}

const char* dash_for(LineStyle s) {
  switch (s) {
    case LineStyle::dashed: return "8 5";
    case LineStyle::dotted: return "2 4";
    default: return "";
  }
}

void raster_dash_for(LineStyle s, double& on, double& off) {
  switch (s) {
    case LineStyle::dashed: on = 8; off = 5; break;
    case LineStyle::dotted: on = 2; off = 4; break;
    default: on = 0; off = 0; break;
  }
}

double scatter_radius(MarkerShape m) {
  switch (m) {
    case MarkerShape::square: return 3.0;
    case MarkerShape::diamond: return 5.0;
    default: return 4.0;
  }
}

void draw_marker_svg(std::ostringstream& out, MarkerShape m, double x, double y,
                     Color c) {
  switch (m) {
    case MarkerShape::circle:
      out << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y)
          << "\" r=\"4\" fill=\"" << color_hex(c) << "\"/>";
      break;
    case MarkerShape::square:
      out << "<rect x=\"" << fmt(x - 3.5) << "\" y=\"" << fmt(y - 3.5)
          << "\" width=\"7\" height=\"7\" fill=\"" << color_hex(c) << "\"/>";
      break;
    case MarkerShape::diamond:
      out << "<polygon points=\"" << fmt(x) << "," << fmt(y - 5) << " " << fmt(x + 5)
          << "," << fmt(y) << " " << fmt(x) << "," << fmt(y + 5) << " " << fmt(x - 5)
          << "," << fmt(y) << "\" fill=\"" << color_hex(c) << "\"/>";
      break;
  }
}

void draw_marker_raster(Raster& img, MarkerShape m, double x, double y, Color c) {
  switch (m) {
    case MarkerShape::circle: fill_circle_r(img, x, y, 4.0, c); break;
    case MarkerShape::square: fill_rect_r(img, x - 3.5, y - 3.5, x + 3.5, y + 3.5, c); break;
    case MarkerShape::diamond: fill_diamond_r(img, x, y, 5.0, c); break;
  }
}

}  // namespace

Rendered render(const ChartSpec& spec, const MetaTable& table) {
  if (spec.palette.size() != table.series())
    throw RenderError("render: palette length != series count");
  if (table.rows() == 0 || table.series() == 0)
    throw RenderError("render: empty table");
  for (const auto& row : table.values)
    if (row.size() != table.series()) throw RenderError("render: ragged value grid");

  const bool is_pie = spec.chart_type == ChartType::pie;
  const bool is_hbar =
      spec.chart_type == ChartType::bar &&
      std::get<BarOptions>(spec.options).orientation == BarOrientation::horizontal;

  const Layout lay = make_layout(table);
  const std::size_t rows = table.rows();
  const std::size_t series = table.series();

  Raster img(kCanvas, kCanvas);
  std::ostringstream axes, grid, marks, legend, title;

  // --- axes ------------------------------------------------------------
  if (!is_pie) {
    axes << svg_line(kPlotX0, kPlotY1, kPlotX1, kPlotY1, kAxisColor, 1.5);
    axes << svg_line(kPlotX0, kPlotY0, kPlotX0, kPlotY1, kAxisColor, 1.5);
    draw_line_r(img, kPlotX0, kPlotY1, kPlotX1, kPlotY1, kAxisColor, 1.5);
    draw_line_r(img, kPlotX0, kPlotY0, kPlotX0, kPlotY1, kAxisColor, 1.5);

    // tick labels: values on one axis, categories on the other
    for (std::size_t t = 0; t < lay.ticks; ++t) {
      const double v = lay.tick_value(t);
      const std::string label = format_number(canonical_value(v));
      if (is_hbar) {
        const double x = value_to_x(lay, v);
        axes << svg_text(x, kPlotY1 + 16, label, spec.label_font_size, 'm', kTextColor);
        draw_text_r(img, x, kPlotY1 + 16, label, spec.label_font_size, 'm', kTextColor);
      } else {
        const double y = value_to_y(lay, v);
        axes << svg_text(kPlotX0 - 6, y + 4, label, spec.label_font_size, 'e', kTextColor);
        draw_text_r(img, kPlotX0 - 6, y + 4, label, spec.label_font_size, 'e', kTextColor);
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (is_hbar) {
        const double y = category_center_y(r, rows);
        axes << svg_text(kPlotX0 - 6, y + 4, table.row_labels[r], spec.label_font_size,
                         'e', kTextColor);
        draw_text_r(img, kPlotX0 - 6, y + 4, table.row_labels[r],
                    spec.label_font_size, 'e', kTextColor);
      } else {
        const double x = category_center_x(r, rows);
        axes << svg_text(x, kPlotY1 + 16, table.row_labels[r], spec.label_font_size,
                         'm', kTextColor);
        draw_text_r(img, x, kPlotY1 + 16, table.row_labels[r], spec.label_font_size,
                    'm', kTextColor);
      }
    }
  }

  // --- grid ------------------------------------------------------------
  if (spec.grid && !is_pie) {
    for (std::size_t t = 1; t < lay.ticks; ++t) {
      const double v = lay.tick_value(t);
      if (is_hbar) {
        const double x = value_to_x(lay, v);
        grid << svg_line(x, kPlotY0, x, kPlotY1, kGridColor, 1.0);
        draw_line_r(img, x, kPlotY0, x, kPlotY1, kGridColor, 1.0);
      } else {
        const double y = value_to_y(lay, v);
        grid << svg_line(kPlotX0, y, kPlotX1, y, kGridColor, 1.0);
        draw_line_r(img, kPlotX0, y, kPlotX1, y, kGridColor, 1.0);
      }
    }
  }

  // --- marks -----------------------------------------------------------
  switch (spec.chart_type) {
    case ChartType::line: {
      const auto& opt = std::get<LineOptions>(spec.options);
      double dash_on, dash_off;
      raster_dash_for(opt.style, dash_on, dash_off);
      for (std::size_t s = 0; s < series; ++s) {
        const Color c = parse_color(spec.palette[s]);
        marks << "<path d=\"";
        for (std::size_t r = 0; r < rows; ++r) {
          const double x = category_center_x(r, rows);
          const double y = value_to_y(lay, table.values[r][s]);
          marks << (r == 0 ? "M" : " L") << fmt(x) << "," << fmt(y);
          if (r + 1 < rows) {
            const double nx = category_center_x(r + 1, rows);
            const double ny = value_to_y(lay, table.values[r + 1][s]);
            draw_line_r(img, x, y, nx, ny, c, 2.0, dash_on, dash_off);
          }
        }
        marks << "\" fill=\"none\" stroke=\"" << color_hex(c) << "\" stroke-width=\"2\"";
        const char* dash = dash_for(opt.style);
        if (dash[0] != '\0') marks << " stroke-dasharray=\"" << dash << "\"";
        marks << "/>";
        for (std::size_t r = 0; r < rows; ++r) {
          const double x = category_center_x(r, rows);
          const double y = value_to_y(lay, table.values[r][s]);
          draw_marker_svg(marks, opt.marker, x, y, c);
          draw_marker_raster(img, opt.marker, x, y, c);
        }
      }
      break;
    }
    case ChartType::bar: {
      const auto& opt = std::get<BarOptions>(spec.options);
      if (opt.orientation == BarOrientation::vertical) {
        const double group_w = (kPlotX1 - kPlotX0) / static_cast<double>(rows);
        const double slot_w = group_w / static_cast<double>(series);
        const double bar_w = slot_w * opt.width;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t s = 0; s < series; ++s) {
            const Color c = parse_color(spec.palette[s]);
            const double x = kPlotX0 + group_w * static_cast<double>(r) +
                             slot_w * (static_cast<double>(s) + 0.5) - bar_w / 2.0;
            const double y = value_to_y(lay, table.values[r][s]);
            marks << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\""
                  << fmt(bar_w) << "\" height=\"" << fmt(kPlotY1 - y) << "\" fill=\""
                  << color_hex(c) << "\"/>";
            fill_rect_r(img, x, y, x + bar_w, kPlotY1, c);
          }
      } else {
        const double group_h = (kPlotY1 - kPlotY0) / static_cast<double>(rows);
        const double slot_h = group_h / static_cast<double>(series);
        const double bar_h = slot_h * opt.width;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t s = 0; s < series; ++s) {
            const Color c = parse_color(spec.palette[s]);
            const double y = kPlotY0 + group_h * static_cast<double>(r) +
                             slot_h * (static_cast<double>(s) + 0.5) - bar_h / 2.0;
            const double x = value_to_x(lay, table.values[r][s]);
            marks << "<rect x=\"" << fmt(kPlotX0) << "\" y=\"" << fmt(y) << "\" width=\""
                  << fmt(x - kPlotX0) << "\" height=\"" << fmt(bar_h) << "\" fill=\""
                  << color_hex(c) << "\"/>";
            fill_rect_r(img, kPlotX0, y, x, y + bar_h, c);
          }
      }
      break;
    }
    case ChartType::pie: {
      const auto& opt = std::get<PieOptions>(spec.options);
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) total += table.values[r][0];
      if (total <= 0.0) throw RenderError("render: pie slices sum to zero");
      const double cx = 245.0, cy = 255.0, radius = 140.0;
      const Color base = parse_color(spec.palette[0]);
      double angle = -M_PI / 2.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double frac = table.values[r][0] / total;
        const double a0 = angle;
        const double a1 = angle + frac * 2.0 * M_PI;
        angle = a1;
        const Color c = shade(base, 0.65 * static_cast<double>(r) /
                                        std::max<std::size_t>(1, rows));
        const double mid = (a0 + a1) / 2.0;
        const double off = (r < opt.explode.size() ? opt.explode[r] : 0.0) * radius;
        const double ox = cx + off * std::cos(mid), oy = cy + off * std::sin(mid);
        const double x0 = ox + radius * std::cos(a0), y0 = oy + radius * std::sin(a0);
        const double x1 = ox + radius * std::cos(a1), y1 = oy + radius * std::sin(a1);
        marks << "<path d=\"M" << fmt(ox) << "," << fmt(oy) << " L" << fmt(x0) << ","
              << fmt(y0);
        if (a1 - a0 >= 2.0 * M_PI - 1e-9) {
          // full-circle slice: two half arcs keep the path well defined
          const double xm = ox + radius * std::cos(a0 + M_PI);
          const double ym = oy + radius * std::sin(a0 + M_PI);
          marks << " A" << fmt(radius) << "," << fmt(radius) << " 0 0,1 " << fmt(xm)
                << "," << fmt(ym);
          marks << " A" << fmt(radius) << "," << fmt(radius) << " 0 0,1 " << fmt(x0)
                << "," << fmt(y0);
        } else {
          const int large = (a1 - a0) > M_PI ? 1 : 0;
          marks << " A" << fmt(radius) << "," << fmt(radius) << " 0 " << large << ",1 "
                << fmt(x1) << "," << fmt(y1);
        }
        marks << " Z\" fill=\"" << color_hex(c) << "\"/>";
        fill_wedge_r(img, ox, oy, radius, a0, a1, c);
      }
      break;
    }
    case ChartType::scatter: {
      const auto& opt = std::get<ScatterOptions>(spec.options);
      const double radius = scatter_radius(opt.marker);
      for (std::size_t s = 0; s < series; ++s) {
        const Color c = parse_color(spec.palette[s]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double x = category_center_x(r, rows);
          const double y = value_to_y(lay, table.values[r][s]);
          marks << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y) << "\" r=\""
                << fmt(radius) << "\" fill=\"" << color_hex(c) << "\"/>";
          fill_circle_r(img, x, y, radius, c);
        }
      }
      break;
    }
  }

  // --- legend ----------------------------------------------------------
  if (spec.legend_show) {
    const double entry_h = 18.0;
    const double box_w = 120.0;
    const double box_h = entry_h * static_cast<double>(series) + 8.0;
    double lx = kPlotX1 - box_w - 8.0, ly = kPlotY0 + 8.0;
    if (spec.legend_location == LegendLocation::topleft ||
        spec.legend_location == LegendLocation::bottomleft)
      lx = kPlotX0 + 8.0;
    if (spec.legend_location == LegendLocation::bottomleft ||
        spec.legend_location == LegendLocation::bottomright)
      ly = kPlotY1 - box_h - 8.0;
    legend << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(ly) << "\" width=\""
           << fmt(box_w) << "\" height=\"" << fmt(box_h)
           << "\" fill=\"#ffffff\" stroke=\"" << color_hex(kAxisColor) << "\"/>";
    fill_rect_r(img, lx, ly, lx + box_w, ly + box_h, Color{255, 255, 255});
    draw_line_r(img, lx, ly, lx + box_w, ly, kAxisColor, 1.0);
    draw_line_r(img, lx, ly + box_h, lx + box_w, ly + box_h, kAxisColor, 1.0);
    draw_line_r(img, lx, ly, lx, ly + box_h, kAxisColor, 1.0);
    draw_line_r(img, lx + box_w, ly, lx + box_w, ly + box_h, kAxisColor, 1.0);
    for (std::size_t s = 0; s < series; ++s) {
      const Color c = parse_color(spec.palette[s]);
      const double ey = ly + 6.0 + entry_h * static_cast<double>(s);
      legend << "<rect x=\"" << fmt(lx + 6) << "\" y=\"" << fmt(ey) << "\" width=\"12\""
             << " height=\"12\" fill=\"" << color_hex(c) << "\"/>";
      legend << svg_text(lx + 24, ey + 10, table.col_labels[s], spec.label_font_size,
                         's', kTextColor);
      fill_rect_r(img, lx + 6, ey, lx + 18, ey + 12, c);
      draw_text_r(img, lx + 24, ey + 10, table.col_labels[s], spec.label_font_size,
                  's', kTextColor);
    }
  }

  // --- title -----------------------------------------------------------
  {
    double tx = 245.0;
    char anchor = 'm';
    if (spec.title_position == TitlePosition::left) {
      tx = kPlotX0;
      anchor = 's';
    } else if (spec.title_position == TitlePosition::right) {
      tx = kPlotX1;
      anchor = 'e';
    }
    title << svg_text(tx, 30.0, spec.title_text, spec.title_font_size, anchor,
                      kTextColor);
    draw_text_r(img, tx, 30.0, spec.title_text, spec.title_font_size, anchor,
                kTextColor);
  }

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kCanvas
      << "\" height=\"" << kCanvas << "\" viewBox=\"0 0 " << kCanvas << " " << kCanvas
      << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << kCanvas << "\" height=\"" << kCanvas
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<g class=\"axes\">" << axes.str() << "</g>\n";
  svg << "<g class=\"grid\">" << grid.str() << "</g>\n";
  svg << "<g class=\"marks\">" << marks.str() << "</g>\n";
  svg << "<g class=\"legend\">" << legend.str() << "</g>\n";
  svg << "<g class=\"title\">" << title.str() << "</g>\n";
  svg << "</svg>\n";

  return Rendered{svg.str(), std::move(img)};
}

// ---------------------------------------------------------------------------
// Minimal XML well-formedness scan: balanced, properly nested tags, quoted
// attribute values, single root element.
// ---------------------------------------------------------------------------

bool svg_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  const std::size_t n = text.size();
  std::size_t roots = 0;
  bool prolog_ok = true;
  while (i < n) {
    const char c = text[i];
    if (c == '<') {
      if (i + 1 >= n) return false;
      if (text[i + 1] == '?') {
        const std::size_t end = text.find("?>", i);
        if (end == std::string::npos || !prolog_ok) return false;
        i = end + 2;
        continue;
      }
      const bool closing = text[i + 1] == '/';
      std::size_t j = i + (closing ? 2 : 1);
      std::size_t name_start = j;
      while (j < n && (std::isalnum(static_cast<unsigned char>(text[j])) ||
                       text[j] == ':' || text[j] == '-' || text[j] == '_'))
        ++j;
      const std::string name = text.substr(name_start, j - name_start);
      if (name.empty()) return false;
      // scan to '>' honoring quoted attribute values
      bool self_close = false;
      bool in_quote = false;
      while (j < n) {
        if (in_quote) {
          if (text[j] == '"') in_quote = false;
        } else if (text[j] == '"') {
          in_quote = true;
        } else if (text[j] == '>') {
          break;
        } else if (text[j] == '<') {
          return false;
        } else if (text[j] == '/' && j + 1 < n && text[j + 1] == '>') {
          self_close = true;
        }
        ++j;
      }
      if (j >= n || in_quote) return false;
      if (closing) {
        if (self_close || stack.empty() || stack.back() != name) return false;
        stack.pop_back();
        if (stack.empty()) prolog_ok = false;
      } else if (self_close) {
        if (stack.empty()) ++roots;
        prolog_ok = false;
      } else {
        if (stack.empty()) ++roots;
        stack.push_back(name);
        prolog_ok = false;
      }
      i = j + 1;
    } else {
      if (c == '>') return false;
      ++i;
    }
  }
  return stack.empty() && roots == 1;
}

}  // namespace chartmix::synth
