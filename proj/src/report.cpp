#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "modnet/harness.hpp"
#include "modnet/manifest.hpp"

namespace modnet {

namespace {

namespace fs = std::filesystem;

std::string cell_dir(const std::string& root, int r, const std::string& library, uint64_t seed) {
  return (fs::path(root) / ("r" + std::to_string(r)) / library / ("seed" + std::to_string(seed))).string();
}

bool manifest_verifies(const std::string& dir) {
  std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(mpath);
  if (!in) return false;
  nlohmann::json m;
  try {
    in >> m;
    for (auto& [name, hash] : m.at("run").at("artifact_hashes").items()) {
      std::string path = (fs::path(dir) / name).string();
      if (sha256_file(path) != hash.get<std::string>()) return false;
    }
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

}  // namespace

SweepResult run_data_run(const SweepConfig& sweep, const std::string& out_dir, bool resume) {
  if (sweep.r_values.empty() || sweep.libraries.empty() || sweep.model_seeds.empty())
    throw ConfigError("sweep: r_values, libraries and seeds must be non-empty");
  SweepResult result;
  fs::create_directories(out_dir);

  for (int r : sweep.r_values) {
    // dataset per r; all library cells for this r share it, and the OOD shard
    // is byte-identical across r (same test combinations, same seed)
    vqa::DataGenSpec spec = sweep.data;
    spec.r_train = r;
    std::string data_dir = (fs::path(out_dir) / "data" / ("r" + std::to_string(r))).string();
    if (!(resume && manifest_verifies(data_dir)))
      write_dataset_dir(spec, data_dir, "sweep gen-data r=" + std::to_string(r));

    for (const auto& library : sweep.libraries) {
      for (uint64_t seed : sweep.model_seeds) {
        std::string dir = cell_dir(out_dir, r, library, seed);
        std::string cell_result = (fs::path(dir) / "cell.json").string();
        if (resume && manifest_verifies(dir)) {
          std::ifstream in(cell_result);
          nlohmann::json j;
          in >> j;
          for (auto& cj : j.at("cells")) {
            SweepCell c;
            c.task = cj.at("task");
            c.library = cj.at("library");
            c.r = cj.at("r");
            c.realized_pct = cj.at("realized_pct");
            c.seed = cj.at("seed");
            c.lr = cj.at("lr");
            c.id_val_acc = cj.at("id_val_acc");
            c.ood_acc = cj.at("ood_acc");
            c.selected = cj.at("selected");
            if (cj.contains("per_question_ood"))
              c.per_question_ood = cj.at("per_question_ood").get<std::map<std::string, double>>();
            result.cells.push_back(c);
          }
          continue;
        }
        try {
          ManifestBuilder mb("sweep cell r=" + std::to_string(r) + " library=" + library +
                             " seed=" + std::to_string(seed));
          TrainConfig cfg = sweep.base;
          cfg.library = LibraryConfig::parse_name(library);
          cfg.library.channels = sweep.base.library.channels;
          cfg.library.embedding_dim = cfg.library.channels;
          cfg.library.vector_hidden = sweep.base.library.vector_hidden;
          cfg.model_seed = seed;
          cfg.data_dir = data_dir;
          auto grid = grid_search(cfg, sweep.lr_grid, dir);

          nlohmann::json cells_json = nlohmann::json::array();
          for (size_t gi = 0; gi < grid.runs.size(); ++gi) {
            const auto& run = grid.runs[gi];
            SweepCell c;
            c.task = sweep.data.task;
            c.library = library;
            c.r = r;
            c.realized_pct = run.realized_train_pct;
            c.seed = seed;
            c.lr = grid.lrs[gi];
            c.id_val_acc = run.final_val_acc;
            c.ood_acc = run.ood_acc;
            c.selected = static_cast<int>(gi) == grid.selected;
            c.per_question_ood = run.per_question_ood;
            result.cells.push_back(c);
            nlohmann::json cj;
            cj["task"] = c.task;
            cj["library"] = c.library;
            cj["r"] = c.r;
            cj["realized_pct"] = c.realized_pct;
            cj["seed"] = c.seed;
            cj["lr"] = c.lr;
            cj["id_val_acc"] = c.id_val_acc;
            cj["ood_acc"] = c.ood_acc;
            cj["selected"] = c.selected;
            cj["per_question_ood"] = c.per_question_ood;
            cells_json.push_back(cj);
          }
          {
            std::ofstream out(cell_result, std::ios::trunc);
            out << nlohmann::json{{"cells", cells_json}}.dump(2) << "\n";
          }
          mb.add_input((fs::path(data_dir) / "train.bin").string());
          mb.add_input((fs::path(data_dir) / "ood.bin").string());
          mb.add_artifact(cell_result);
          nlohmann::json seeds;
          seeds["model_seed"] = seed;
          seeds["data_seed"] = sweep.data.seed;
          mb.set_seeds(seeds);
          mb.finish(dir);
        } catch (const Error& e) {
          result.failures.push_back("r=" + std::to_string(r) + " library=" + library +
                                    " seed=" + std::to_string(seed) + ": " + e.what());
        }
      }
    }
  }
  write_report(result.cells, out_dir);
  return result;
}

void write_report(const std::vector<SweepCell>& cells, const std::string& dir) {
  fs::create_directories(dir);

  // results.csv
  {
    std::ofstream out((fs::path(dir) / "results.csv").string(), std::ios::trunc);
    out << "task,library,r,realized_pct,seed,lr,id_val_acc,ood_acc,selected\n";
    for (const auto& c : cells) {
      std::ostringstream row;
      row.precision(10);
      row << c.task << "," << c.library << "," << c.r << "," << c.realized_pct << "," << c.seed << ","
          << c.lr << "," << c.id_val_acc << "," << c.ood_acc << "," << (c.selected ? 1 : 0);
      out << row.str() << "\n";
    }
    if (!out) throw IoError("cannot write results.csv under '" + dir + "'");
  }

  // breakdown.csv: one column per question type, selected runs only
  {
    std::set<std::string> questions;
    for (const auto& c : cells)
      if (c.selected)
        for (auto& [q, acc] : c.per_question_ood) questions.insert(q);
    std::ofstream out((fs::path(dir) / "breakdown.csv").string(), std::ios::trunc);
    out << "task,library,r,seed";
    for (auto& q : questions) out << "," << q;
    out << "\n";
    for (const auto& c : cells) {
      if (!c.selected) continue;
      out << c.task << "," << c.library << "," << c.r << "," << c.seed;
      for (auto& q : questions) {
        auto it = c.per_question_ood.find(q);
        out << ",";
        if (it != c.per_question_ood.end()) out << it->second;
      }
      out << "\n";
    }
  }

  // results.json mirrors the csv with full rows
  {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : cells) {
      rows.push_back({{"task", c.task},
                      {"library", c.library},
                      {"r", c.r},
                      {"realized_pct", c.realized_pct},
                      {"seed", c.seed},
                      {"lr", c.lr},
                      {"id_val_acc", c.id_val_acc},
                      {"ood_acc", c.ood_acc},
                      {"selected", c.selected},
                      {"per_question_ood", c.per_question_ood}});
    }
    std::ofstream out((fs::path(dir) / "results.json").string(), std::ios::trunc);
    out << rows.dump(2) << "\n";
  }

  // plot data: mean/std OOD accuracy per (r, library) over selected runs
  struct Agg {
    std::vector<double> values;
    double pct = 0;
  };
  std::map<std::pair<int, std::string>, Agg> agg;
  std::set<int> r_set;
  std::set<std::string> lib_set;
  for (const auto& c : cells) {
    if (!c.selected) continue;
    auto& a = agg[{c.r, c.library}];
    a.values.push_back(c.ood_acc);
    a.pct = c.realized_pct;
    r_set.insert(c.r);
    lib_set.insert(c.library);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= std::max<size_t>(1, v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    s = v.size() > 1 ? std::sqrt(s / (static_cast<double>(v.size()) - 1)) : 0.0;
    return std::make_pair(m, s);
  };
  {
    nlohmann::json series = nlohmann::json::object();
    for (auto& lib : lib_set) {
      nlohmann::json pts = nlohmann::json::array();
      for (int r : r_set) {
        auto it = agg.find({r, lib});
        if (it == agg.end()) continue;
        auto [m, s] = mean_std(it->second.values);
        pts.push_back({{"r", r},
                       {"realized_pct", it->second.pct},
                       {"mean_ood_acc", m},
                       {"std_ood_acc", s},
                       {"runs", it->second.values.size()}});
      }
      series[lib] = pts;
    }
    std::ofstream out((fs::path(dir) / "plotdata.json").string(), std::ios::trunc);
    out << series.dump(2) << "\n";
  }

  // static bar chart, grouped by r
  {
    int width = 900, height = 420, left = 70, bottom = 60, top = 30;
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    const char* palette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};
    int plot_w = width - left - 30, plot_h = height - top - bottom;
    for (int tick = 0; tick <= 10; tick += 2) {
      double y = top + plot_h - plot_h * tick / 10.0;
      svg << "<line x1='" << left << "' y1='" << y << "' x2='" << width - 30 << "' y2='" << y
          << "' stroke='#dddddd'/>\n";
      svg << "<text x='" << left - 8 << "' y='" << y + 4 << "' text-anchor='end' font-size='12'>"
          << tick * 10 << "%</text>\n";
    }
    int n_groups = static_cast<int>(r_set.size());
    int n_libs = static_cast<int>(lib_set.size());
    if (n_groups > 0 && n_libs > 0) {
      double group_w = static_cast<double>(plot_w) / n_groups;
      double bar_w = group_w * 0.8 / n_libs;
      int gi = 0;
      for (int r : r_set) {
        int li = 0;
        for (auto& lib : lib_set) {
          auto it = agg.find({r, lib});
          if (it != agg.end()) {
            auto [m, s] = mean_std(it->second.values);
            double x = left + gi * group_w + group_w * 0.1 + li * bar_w;
            double h = plot_h * m;
            svg << "<rect x='" << x << "' y='" << top + plot_h - h << "' width='" << bar_w * 0.9
                << "' height='" << h << "' fill='" << palette[li % 6] << "'/>\n";
            if (s > 0) {
              double cx = x + bar_w * 0.45;
              svg << "<line x1='" << cx << "' y1='" << top + plot_h - h - plot_h * s << "' x2='" << cx
                  << "' y2='" << top + plot_h - h + plot_h * s << "' stroke='black'/>\n";
            }
          }
          ++li;
        }
        std::string label = "r=" + std::to_string(r);
        auto it2 = agg.find({r, *lib_set.begin()});
        if (it2 != agg.end()) {
          std::ostringstream pct;
          pct.precision(3);
          pct << it2->second.pct;
          label += " (" + pct.str() + "%)";
        }
        svg << "<text x='" << left + gi * group_w + group_w / 2 << "' y='" << height - bottom + 20
            << "' text-anchor='middle' font-size='12'>" << label << "</text>\n";
        ++gi;
      }
      int li = 0;
      for (auto& lib : lib_set) {
        double y = top + 16 * li;
        svg << "<rect x='" << width - 240 << "' y='" << y - 10 << "' width='12' height='12' fill='"
            << palette[li % 6] << "'/>\n";
        svg << "<text x='" << width - 222 << "' y='" << y << "' font-size='12'>" << lib << "</text>\n";
        ++li;
      }
    }
    svg << "<text x='" << left << "' y='" << height - 14
        << "' font-size='12'>OOD test accuracy by training-combination diversity (bars grouped by r; "
           "mean over seeds, whiskers one standard deviation)</text>\n";
    svg << "</svg>\n";
    std::ofstream out((fs::path(dir) / "ood_accuracy.svg").string(), std::ios::trunc);
    out << svg.str();
  }
}

std::vector<SweepCell> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results csv '" + path + "'");
  std::string header;
  if (!std::getline(in, header)) throw FormatError("results csv '" + path + "' is empty");
  if (header != "task,library,r,realized_pct,seed,lr,id_val_acc,ood_acc,selected")
    throw FormatError("results csv '" + path + "' has an incompatible schema: " + header);
  std::vector<SweepCell> cells;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 9)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 9 fields, got " +
                        std::to_string(fields.size()));
    SweepCell c;
    c.task = fields[0];
    c.library = fields[1];
    c.r = std::stoi(fields[2]);
    c.realized_pct = std::stod(fields[3]);
    c.seed = std::stoull(fields[4]);
    c.lr = std::stod(fields[5]);
    c.id_val_acc = std::stod(fields[6]);
    c.ood_acc = std::stod(fields[7]);
    c.selected = fields[8] == "1";
    cells.push_back(c);
  }
  return cells;
}

}  // namespace modnet
