//! C ABI for the simulator and the DDPG agent.
//!
//! Every entry point returns an [`NfvStatus`]. Objects are reached through
//! opaque handles created by a `*_new`/`*_load` call and released with the
//! matching `*_free`. After a failure, [`nfv_last_error`] returns a message
//! describing it; the pointer stays valid until the next call on the same
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nfv_energy::ddpg::{Agent, AgentConfig};
use nfv_energy::harness::ExperimentConfig;
use nfv_energy::simenv::{power, PowerParams, ResourceAllocation, SimEnv};
use nfv_energy::sla::energy_saving;
use nfv_energy::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfvStatus {
    Ok = 0,
    NullPointer = 1,
    /// An argument fell outside its domain.
    InvalidArgument = 2,
    /// A buffer length did not match the expected dimension.
    Dimension = 3,
    /// A computation produced NaN or infinity.
    NonFinite = 4,
    /// A configuration string or file was rejected.
    Config = 5,
    /// Reading or writing files failed.
    Io = 6,
    /// An internal panic was caught at the boundary.
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> NfvStatus {
    match err {
        Error::Dimension { .. } | Error::Architecture(_) => NfvStatus::Dimension,
        Error::NonFinite(_) => NfvStatus::NonFinite,
        Error::Config(_) | Error::Format(_) => NfvStatus::Config,
        Error::Io(_) | Error::Csv(_) => NfvStatus::Io,
        _ => NfvStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), NfvFailure>) -> NfvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfvStatus::Ok,
        Ok(Err(failure)) => {
            set_error(failure.message);
            failure.status
        }
        Err(_) => {
            set_error("internal panic");
            NfvStatus::Internal
        }
    }
}

struct NfvFailure {
    status: NfvStatus,
    message: String,
}

impl From<Error> for NfvFailure {
    fn from(e: Error) -> Self {
        Self { status: status_of(&e), message: e.to_string() }
    }
}

fn fail(status: NfvStatus, message: &str) -> NfvFailure {
    NfvFailure { status, message: message.to_owned() }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, NfvFailure> {
    if p.is_null() {
        return Err(fail(NfvStatus::NullPointer, name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(NfvStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], NfvFailure> {
    if p.is_null() {
        return Err(fail(NfvStatus::NullPointer, name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], NfvFailure> {
    if p.is_null() {
        return Err(fail(NfvStatus::NullPointer, name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, NfvFailure> {
    p.as_mut().ok_or_else(|| fail(NfvStatus::NullPointer, name))
}

fn copy_exact(dst: &mut [f64], src: &[f64]) -> Result<(), NfvFailure> {
    if dst.len() != src.len() {
        return Err(Error::Dimension { expected: src.len(), got: dst.len() }.into());
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Message for the most recent failure on this thread, or null.
#[no_mangle]
pub extern "C" fn nfv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

// ---------------------------------------------------------------------------
// Environment

/// Opaque simulator instance with its SLA.
pub struct NfvEnv {
    env: SimEnv,
}

/// Build an environment from an experiment config in TOML form.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nfv_env_new(config_toml: *const c_char, seed: u64, out: *mut *mut NfvEnv) -> NfvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = ExperimentConfig::from_toml_str(str_arg(config_toml, "config_toml")?)?;
        let env = SimEnv::new(cfg.scenario.clone(), Some(cfg.sla_spec()?), seed)?;
        *out = Box::into_raw(Box::new(NfvEnv { env }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`nfv_env_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nfv_env_free(env: *mut NfvEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Length of the normalized state vector; 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfv_env_state_dim(env: *const NfvEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.scenario().state_dim())
}

/// Length of the raw action vector; 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfv_env_action_dim(env: *const NfvEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.scenario().action_dim())
}

/// Reseed and write the initial normalized state.
///
/// # Safety
/// `state_out` must point to `state_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nfv_env_reset(env: *mut NfvEnv, seed: u64, state_out: *mut f64, state_len: usize) -> NfvStatus {
    guard(|| {
        let env = &mut out_arg(env, "env")?.env;
        let out = slice_out(state_out, state_len, "state_out")?;
        let obs = env.reset(seed);
        copy_exact(out, &env.scenario().normalize(&obs))
    })
}

/// Apply a raw action in `[-1, 1]^d` for one control interval.
///
/// Writes the next normalized state, the SLA reward and whether the SLA
/// constraint was violated. The environment is unchanged on failure.
///
/// # Safety
/// Buffers must be valid for their stated lengths; scalar outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nfv_env_step(
    env: *mut NfvEnv,
    action: *const f64,
    action_len: usize,
    state_out: *mut f64,
    state_len: usize,
    reward_out: *mut f64,
    violated_out: *mut bool,
) -> NfvStatus {
    guard(|| {
        let env = &mut out_arg(env, "env")?.env;
        let action = slice_arg(action, action_len, "action")?;
        let state = slice_out(state_out, state_len, "state_out")?;
        let reward = out_arg(reward_out, "reward_out")?;
        let violated = out_arg(violated_out, "violated_out")?;
        let sc = env.scenario();
        if action.len() != sc.action_dim() {
            return Err(Error::Dimension { expected: sc.action_dim(), got: action.len() }.into());
        }
        if state.len() != sc.state_dim() {
            return Err(Error::Dimension { expected: sc.state_dim(), got: state.len() }.into());
        }
        let alloc = ResourceAllocation::from_raw_action(action, &sc.ranges)?;
        let outcome = env.step_default(&alloc)?;
        copy_exact(state, &env.scenario().normalize(&outcome.observations))?;
        *reward = outcome.reward;
        *violated = outcome.sla_violated;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Agent

/// Opaque DDPG agent with its own exploration generator.
pub struct NfvAgent {
    agent: Agent,
    rng: ChaCha8Rng,
}

/// Freshly initialized agent with default hyperparameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nfv_agent_new(state_dim: usize, action_dim: usize, seed: u64, out: *mut *mut NfvAgent) -> NfvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(state_dim, action_dim, AgentConfig::default(), &mut rng)?;
        *out = Box::into_raw(Box::new(NfvAgent { agent, rng }));
        Ok(())
    })
}

/// Load a checkpoint directory written by training or [`nfv_agent_save`].
///
/// # Safety
/// `dir` must be a valid NUL-terminated path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nfv_agent_load(dir: *const c_char, seed: u64, out: *mut *mut NfvAgent) -> NfvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let agent = Agent::load(str_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(NfvAgent { agent, rng: ChaCha8Rng::seed_from_u64(seed) }));
        Ok(())
    })
}

/// # Safety
/// `agent` must be a live handle and `dir` a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn nfv_agent_save(agent: *const NfvAgent, dir: *const c_char) -> NfvStatus {
    guard(|| {
        let agent = agent.as_ref().ok_or_else(|| fail(NfvStatus::NullPointer, "agent"))?;
        agent.agent.save(str_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `agent` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nfv_agent_free(agent: *mut NfvAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Policy action for `state`; with `explore` set, Gaussian noise is added.
///
/// # Safety
/// Buffers must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn nfv_agent_act(
    agent: *mut NfvAgent,
    state: *const f64,
    state_len: usize,
    explore: bool,
    action_out: *mut f64,
    action_len: usize,
) -> NfvStatus {
    guard(|| {
        let handle = out_arg(agent, "agent")?;
        let state = slice_arg(state, state_len, "state")?;
        let out = slice_out(action_out, action_len, "action_out")?;
        let action = handle.agent.select_action(state, explore, &mut handle.rng)?;
        copy_exact(out, &action)
    })
}

// ---------------------------------------------------------------------------
// Closed-form models

/// Server power in watts at utilization `u`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nfv_power(u: f64, p_idle: f64, p_max: f64, h: f64, out: *mut f64) -> NfvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let params = PowerParams { p_idle, p_max, h };
        params.validate()?;
        *out = power(u, &params)?;
        Ok(())
    })
}

/// Relative energy saving of a scheduler against a baseline.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nfv_energy_saving(e_nf: f64, e_train: f64, e_baseline: f64, out: *mut f64) -> NfvStatus {
    guard(|| {
        *out_arg(out, "out")? = energy_saving(e_nf, e_train, e_baseline)?;
        Ok(())
    })
}
