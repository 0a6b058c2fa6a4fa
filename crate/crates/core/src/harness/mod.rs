//! Scenario runner, phone-UI model, fuzzer and CLI plumbing.
