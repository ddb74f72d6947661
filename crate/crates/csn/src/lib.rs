pub fn placeholder() -> usize { csn_core::placeholder() }
