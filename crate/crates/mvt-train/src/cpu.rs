//! Process CPU-time accounting for the training budget checks.

/// User + system CPU seconds consumed by this process so far, from
/// `getrusage`. Returns 0.0 if the syscall fails.
pub fn process_cpu_seconds() -> f64 {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: RUSAGE_SELF with an out pointer to writable memory is the
    // documented calling convention; the struct is plain data.
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
    if rc != 0 {
        return 0.0;
    }
    let usage = unsafe { usage.assume_init() };
    let seconds =
        |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    seconds(usage.ru_utime) + seconds(usage.ru_stime)
}
