// SPDX-License-Identifier: Apache-2.0
// Placeholder during bring-up; replaced by the full CLI.
int main() { return 0; }
