// Copyright 2026 The dpldm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPLDM_PARALLEL_H_
#define DPLDM_PARALLEL_H_

#include <functional>

namespace dpldm {

// Process-wide worker count used by ParallelFor. Defaults to 1.
void SetThreadCount(int threads);
int ThreadCount();

// Runs fn(i) for i in [0, n) across ThreadCount() threads using contiguous
// blocks. Callers must make fn(i) depend only on i; the first exception
// thrown by any worker is rethrown after all workers join.
void ParallelFor(int n, const std::function<void(int)>& fn);

// Keeps freed per-sample workspaces (a few hundred KB each) in the heap
// instead of unmapping them after every backward pass. No-op outside glibc.
void RetainFreedMemory();

}  // namespace dpldm

#endif  // DPLDM_PARALLEL_H_
