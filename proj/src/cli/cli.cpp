#include "guilt/cli/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

#include "common.hpp"
#include "guilt/common/error.hpp"

namespace guilt::cli {

std::unique_ptr<Job> Registry::job(const CLI::App* leaf) const {
  std::string command = leaf->get_name();
  if (const CLI::App* parent = leaf->get_parent(); parent && parent->get_parent()) {
    command = parent->get_name() + " " + command;
  }
  auto job = std::make_unique<Job>(command, globals_.argv, globals_.out_dir, globals_.dry_run);
  job->set_config(resolved_config(leaf));
  job->set_seed(globals_.seed);
  return job;
}

Json resolved_config(const CLI::App* leaf) {
  Json j = Json::object();
  for (const CLI::App* a = leaf; a != nullptr; a = a->get_parent()) {
    for (const CLI::Option* o : a->get_options()) {
      const std::string name = o->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "version" || name == "dry-run") continue;
      if (j.contains(name)) continue;
      if (o->get_expected_min() == 0) {
        j[name] = o->count() > 0;
        continue;
      }
      const auto& results = o->results();
      if (results.empty()) {
        j[name] = o->get_default_str();
      } else if (results.size() == 1) {
        j[name] = results.front();
      } else {
        j[name] = results;
      }
    }
  }
  return j;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

annotation::Question guilt_question(const std::string& s) {
  const auto q = annotation::question_from_string(s);
  if (q == annotation::Question::AttentionCheck) throw UsageError("attention checks carry no guilt rating");
  return q;
}

std::string write_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw InvalidInput("CSV lacks column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw InvalidInput("empty CSV");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw InvalidInput("CSV row width differs from header");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

constexpr double kWidth = 640, kHeight = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 60;

std::string svg_open(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + fmt(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) +
         "</text>\n<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kHeight - kBottom) + "\" x2=\"" + fmt(kWidth - kRight) +
         "\" y2=\"" + fmt(kHeight - kBottom) + "\" stroke=\"black\"/>\n<line x1=\"" + fmt(kLeft) + "\" y1=\"" +
         fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" + fmt(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
}

}  // namespace

std::string svg_bars(const std::string& title, const std::vector<std::string>& labels, const std::vector<double>& values) {
  std::string svg = svg_open(title);
  double top = 0;
  for (double v : values) top = std::max(top, v);
  if (top <= 0) top = 1;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  const double slot = values.empty() ? plot_w : plot_w / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = plot_h * values[i] / top;
    const double x = kLeft + slot * static_cast<double>(i);
    svg += "<rect x=\"" + fmt(x + slot * 0.1) + "\" y=\"" + fmt(kHeight - kBottom - h) + "\" width=\"" +
           fmt(slot * 0.8) + "\" height=\"" + fmt(h) + "\" fill=\"steelblue\"/>\n";
    if (i < labels.size()) {
      svg += "<text x=\"" + fmt(x + slot / 2) + "\" y=\"" + fmt(kHeight - kBottom + 14) +
             "\" text-anchor=\"middle\" font-size=\"9\">" + xml_escape(labels[i]) + "</text>\n";
    }
  }
  svg += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(kTop + 4) + "\" text-anchor=\"end\">" + num(top) +
         "</text>\n</svg>\n";
  return svg;
}

std::string svg_scatter(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<std::string>& labels, bool log_axes) {
  auto tx = [log_axes](double v) { return log_axes ? std::log10(std::max(v, 1e-12)) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x0 = std::min(x0, tx(x[i]));
    x1 = std::max(x1, tx(x[i]));
    y0 = std::min(y0, tx(y[i]));
    y1 = std::max(y1, tx(y[i]));
  }
  if (x.empty()) x0 = y0 = 0, x1 = y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  std::string svg = svg_open(title);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double px = kLeft + plot_w * (tx(x[i]) - x0) / (x1 - x0);
    const double py = kHeight - kBottom - plot_h * (tx(y[i]) - y0) / (y1 - y0);
    svg += "<circle cx=\"" + fmt(px) + "\" cy=\"" + fmt(py) + "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
    if (i < labels.size() && !labels[i].empty()) {
      svg += "<text x=\"" + fmt(px + 4) + "\" y=\"" + fmt(py - 4) + "\" font-size=\"9\">" + xml_escape(labels[i]) +
             "</text>\n";
    }
  }
  const std::string suffix = log_axes ? " (log10)" : "";
  svg += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"" + fmt(kHeight - 20) + "\" text-anchor=\"middle\">" +
         xml_escape(x_label + suffix) + "</text>\n";
  svg += "<text x=\"15\" y=\"" + fmt(kHeight / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " +
         fmt(kHeight / 2) + ")\">" + xml_escape(y_label + suffix) + "</text>\n</svg>\n";
  return svg;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Globals globals;
  globals.argv = args;
  globals.out = &out;
  globals.err = &err;

  CLI::App app{"Corpus curation, annotation statistics and guilt-rating models", "guilt"};
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  app.add_option("--seed", globals.seed, "Seed for every random choice");
  app.add_option("--out-dir", globals.out_dir, "Directory that receives every output of the command");
  app.add_flag("--dry-run", globals.dry_run, "Check inputs and flags, then exit without writing anything");
  app.set_config("--config", "", "TOML file with flag values; command-line flags take precedence");

  Registry registry(globals);
  add_data_commands(app, registry);
  add_stats_commands(app, registry);
  add_model_commands(app, registry);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  for (const auto& [leaf, action] : registry.leaves()) {
    if (!leaf->parsed()) continue;
    try {
      return action();
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return kUsage;
    } catch (const MissingInput& e) {
      err << "error: " << e.what() << "\n";
      return kMissingInput;
    } catch (const InvalidInput& e) {
      err << "invalid input: " << e.what() << "\n";
      return kInvalidData;
    } catch (const SchemaError& e) {
      err << "schema error: " << e.what() << "\n";
      return kInvalidData;
    } catch (const nlohmann::json::exception& e) {
      err << "invalid input: " << e.what() << "\n";
      return kInvalidData;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kRuntimeError;
    }
  }
  err << "a subcommand is required\n";
  return kUsage;
}

}  // namespace guilt::cli
