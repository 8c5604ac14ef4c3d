#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "awcl/errors.hpp"

namespace awcl {

enum class Granularity { fine, coarse };

struct AnatomyLabel {
  int id = -1;
  std::string name;
  Granularity granularity = Granularity::fine;
};

// Fine and coarse anatomy label spaces plus the fine -> coarse surjection.
// Immutable after construction; safe to share across workers.
class Taxonomy {
 public:
  Taxonomy() = default;  // empty; populated instances come from the validating ctor
  Taxonomy(std::vector<AnatomyLabel> fine, std::vector<AnatomyLabel> coarse,
           std::vector<int> fine_to_coarse);

  const std::vector<AnatomyLabel>& fine_labels() const { return fine_; }
  const std::vector<AnatomyLabel>& coarse_labels() const { return coarse_; }

  int coarsen(int fine_id) const;

  std::optional<int> fine_id(const std::string& name) const;
  std::optional<int> coarse_id(const std::string& name) const;
  const std::string& fine_name(int id) const;
  const std::string& coarse_name(int id) const;

  int n_fine() const { return static_cast<int>(fine_.size()); }
  int n_coarse() const { return static_cast<int>(coarse_.size()); }

  uint64_t hash() const;

 private:
  std::vector<AnatomyLabel> fine_;
  std::vector<AnatomyLabel> coarse_;
  std::vector<int> fine_to_coarse_;
  std::map<std::string, int> fine_by_name_;
  std::map<std::string, int> coarse_by_name_;
};

// The second-trimester label spaces: 14 fine classes (13 anatomy views plus
// background) and 13 coarse classes.
Taxonomy default_taxonomy();

// Taxonomy file: one record per label.
//   coarse<TAB><id><TAB><name>
//   fine<TAB><id><TAB><name><TAB><coarse name>
// Blank lines and lines starting with '#' are ignored.
Taxonomy load_taxonomy(const std::filesystem::path& path);
void write_taxonomy(const std::filesystem::path& path, const Taxonomy& t);

}  // namespace awcl
