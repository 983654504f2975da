// Copyright 2026 The d4 Authors.
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

#ifndef D4_D4_HPP_
#define D4_D4_HPP_

#include "d4/tensor.hpp"
#include "d4/autodiff.hpp"
#include "d4/forth.hpp"
#include "d4/machine.hpp"
#include "d4/sketch.hpp"
#include "d4/executor.hpp"
#include "d4/training.hpp"

#endif  // D4_D4_HPP_
