// Copyright 2026 The mfuse Authors
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

#ifndef MFUSE_CSV_HPP_
#define MFUSE_CSV_HPP_

#include <string>
#include <string_view>
#include <vector>

namespace mfuse::csv {

/// printf-style "%.<precision>g"; used for every numeric CSV cell so output
/// bytes depend only on values.
std::string num(double value, int precision = 9);

std::string join(const std::vector<std::string>& cells, char sep = ',');
std::vector<std::string> split(std::string_view line, char sep = ',');

/// Parses a double, throwing std::invalid_argument with `what` on failure.
double parseDouble(std::string_view text, std::string_view what);

}  // namespace mfuse::csv

#endif  // MFUSE_CSV_HPP_
