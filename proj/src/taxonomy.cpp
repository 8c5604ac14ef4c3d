#include "awcl/taxonomy.hpp"

#include <fstream>
#include <sstream>

#include "awcl/rng.hpp"

namespace awcl {

namespace {

void check_label_space(const std::vector<AnatomyLabel>& labels, const char* which) {
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].id != static_cast<int>(i))
      throw TaxonomyError(std::string(which) + " ids must be dense and ordered");
    if (labels[i].name.empty())
      throw TaxonomyError(std::string(which) + " label " + std::to_string(i) + " has empty name");
    for (size_t j = 0; j < i; ++j)
      if (labels[j].name == labels[i].name)
        throw TaxonomyError(std::string(which) + " duplicate name: " + labels[i].name);
  }
}

}  // namespace

Taxonomy::Taxonomy(std::vector<AnatomyLabel> fine, std::vector<AnatomyLabel> coarse,
                   std::vector<int> fine_to_coarse)
    : fine_(std::move(fine)), coarse_(std::move(coarse)), fine_to_coarse_(std::move(fine_to_coarse)) {
  check_label_space(fine_, "fine");
  check_label_space(coarse_, "coarse");
  if (fine_to_coarse_.size() != fine_.size())
    throw TaxonomyError("fine_to_coarse must be total over the fine label set");
  for (size_t f = 0; f < fine_to_coarse_.size(); ++f) {
    const int c = fine_to_coarse_[f];
    if (c < 0 || c >= static_cast<int>(coarse_.size()))
      throw TaxonomyError("fine_to_coarse maps " + fine_[f].name + " to unknown coarse id " + std::to_string(c));
  }
  for (auto& l : fine_) fine_by_name_[l.name] = l.id;
  for (auto& l : coarse_) coarse_by_name_[l.name] = l.id;
}

int Taxonomy::coarsen(int fine_id) const {
  if (fine_id < 0 || fine_id >= static_cast<int>(fine_to_coarse_.size()))
    throw TaxonomyError("coarsen: unknown fine id " + std::to_string(fine_id));
  return fine_to_coarse_[static_cast<size_t>(fine_id)];
}

std::optional<int> Taxonomy::fine_id(const std::string& name) const {
  const auto it = fine_by_name_.find(name);
  if (it == fine_by_name_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Taxonomy::coarse_id(const std::string& name) const {
  const auto it = coarse_by_name_.find(name);
  if (it == coarse_by_name_.end()) return std::nullopt;
  return it->second;
}

const std::string& Taxonomy::fine_name(int id) const {
  if (id < 0 || id >= n_fine()) throw TaxonomyError("unknown fine id " + std::to_string(id));
  return fine_[static_cast<size_t>(id)].name;
}

const std::string& Taxonomy::coarse_name(int id) const {
  if (id < 0 || id >= n_coarse()) throw TaxonomyError("unknown coarse id " + std::to_string(id));
  return coarse_[static_cast<size_t>(id)].name;
}

uint64_t Taxonomy::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : fine_) h = hash_mix(h, hash_str(l.name));
  for (const auto& l : coarse_) h = hash_mix(h, hash_str(l.name));
  for (const int c : fine_to_coarse_) h = hash_mix(h, static_cast<uint64_t>(c));
  return h;
}

Taxonomy default_taxonomy() {
  const std::vector<std::string> fine_names = {
      "3VT", "4CH", "RVOT", "LVOT", "BrainTv", "BrainTc", "SpineCor", "SpineSag",
      "abdomen", "femur", "kidneys", "lips", "profile", "background"};
  const std::vector<std::string> coarse_names = {
      "heart", "brain", "spine", "abdomen", "femur", "kidneys", "nose-and-lips",
      "face-side-profile", "full-body-side-profile", "bladder", "3D-mode",
      "maternal-anatomy", "other"};
  const std::map<std::string, std::string> to_coarse = {
      {"3VT", "heart"},      {"4CH", "heart"},       {"RVOT", "heart"},
      {"LVOT", "heart"},     {"BrainTv", "brain"},   {"BrainTc", "brain"},
      {"SpineCor", "spine"}, {"SpineSag", "spine"},  {"abdomen", "abdomen"},
      {"femur", "femur"},    {"kidneys", "kidneys"}, {"lips", "nose-and-lips"},
      {"profile", "face-side-profile"},              {"background", "other"}};

  std::vector<AnatomyLabel> fine, coarse;
  std::map<std::string, int> coarse_ids;
  for (size_t i = 0; i < coarse_names.size(); ++i) {
    coarse.push_back({static_cast<int>(i), coarse_names[i], Granularity::coarse});
    coarse_ids[coarse_names[i]] = static_cast<int>(i);
  }
  std::vector<int> mapping;
  for (size_t i = 0; i < fine_names.size(); ++i) {
    fine.push_back({static_cast<int>(i), fine_names[i], Granularity::fine});
    mapping.push_back(coarse_ids.at(to_coarse.at(fine_names[i])));
  }
  return Taxonomy(std::move(fine), std::move(coarse), std::move(mapping));
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("taxonomy: cannot open: " + path.string());

  struct FineRec {
    int id;
    std::string name;
    std::string coarse_name;
  };
  std::vector<AnatomyLabel> coarse;
  std::vector<FineRec> fine;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() < 3) throw ParseError("taxonomy: too few columns at " + where);
    int id;
    try {
      id = std::stoi(cols[1]);
    } catch (...) {
      throw ParseError("taxonomy: bad id at " + where);
    }
    if (cols[0] == "coarse") {
      coarse.push_back({id, cols[2], Granularity::coarse});
    } else if (cols[0] == "fine") {
      if (cols.size() < 4) throw ParseError("taxonomy: fine record missing parent at " + where);
      fine.push_back({id, cols[2], cols[3]});
    } else {
      throw ParseError("taxonomy: unknown granularity '" + cols[0] + "' at " + where);
    }
  }

  std::map<std::string, int> coarse_ids;
  for (const auto& l : coarse) coarse_ids[l.name] = l.id;
  std::vector<AnatomyLabel> fine_labels;
  std::vector<int> mapping;
  for (const auto& f : fine) {
    fine_labels.push_back({f.id, f.name, Granularity::fine});
    const auto it = coarse_ids.find(f.coarse_name);
    if (it == coarse_ids.end())
      throw TaxonomyError("taxonomy: fine label " + f.name + " names unknown coarse parent " + f.coarse_name);
    mapping.push_back(it->second);
  }
  return Taxonomy(std::move(fine_labels), std::move(coarse), std::move(mapping));
}

void write_taxonomy(const std::filesystem::path& path, const Taxonomy& t) {
  std::ofstream out(path);
  if (!out) throw IoError("taxonomy: cannot open for write: " + path.string());
  for (const auto& l : t.coarse_labels()) out << "coarse\t" << l.id << "\t" << l.name << "\n";
  for (const auto& l : t.fine_labels())
    out << "fine\t" << l.id << "\t" << l.name << "\t" << t.coarse_name(t.coarsen(l.id)) << "\n";
  if (!out) throw IoError("taxonomy: write failed: " + path.string());
}

}  // namespace awcl
