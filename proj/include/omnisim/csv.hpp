// Copyright 2026 The Omnisim Authors
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

#ifndef OMNISIM_CSV_HPP_
#define OMNISIM_CSV_HPP_

#include <string>
#include <string_view>
#include <vector>

namespace omnisim::csv {

// Fixed six decimals, used for every time column.
std::string seconds(double value);
// Shortest decimal that round-trips the binary64 value.
std::string real(double value);
// Parses a value written by real(); throws std::invalid_argument.
double parse_real(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep = ',');

}  // namespace omnisim::csv

#endif  // OMNISIM_CSV_HPP_
