// Copyright 2026 The MML Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Regenerates the bundled data files:
//
//   make_fixture <out_dir>
//
// writes toy.tsv (+ entity index, labels) and planted.tsv (+ entity index, labels).

#include "mml/synthetic.hpp"

#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixture <out_dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  try {
    std::filesystem::create_directories(dir);
    const auto toy = mml::toy_fixture();
    mml::export_ratings(toy.ratings, (dir / "toy.tsv").string(), mml::RatingFormat::tsv);
    mml::export_item_labels(toy, (dir / "toy_labels.tsv").string(), mml::RatingFormat::tsv);

    const auto planted = mml::planted_clusters({}, 1);
    mml::export_ratings(planted.ratings, (dir / "planted.tsv").string(), mml::RatingFormat::tsv);
    mml::export_item_labels(planted, (dir / "planted_labels.tsv").string(), mml::RatingFormat::tsv);
    std::cout << "toy: " << toy.ratings.ratings().size() << " ratings, planted: "
              << planted.ratings.ratings().size() << " ratings\n";
  } catch (const std::exception& e) {
    std::cerr << "make_fixture: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
