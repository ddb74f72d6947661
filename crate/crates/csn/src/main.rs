fn main() { let _ = csn::placeholder(); }
