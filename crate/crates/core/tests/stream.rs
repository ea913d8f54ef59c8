//! Console protocol over a real socket.

use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use teletact::pipeline::{serve, synthetic_lut, Frames, Pipeline, PipelineConfig, Runner, Scenario};
use teletact::stagekin::reference_calibration;
use teletact::stream::{StreamServer, SCHEMA, VERSION};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn runner(period: f64) -> Runner {
    let cfg = PipelineConfig {
        tick_period_s: period,
        ..Default::default()
    };
    let p = Pipeline::with_parts(cfg, synthetic_lut(&Default::default()).unwrap(), reference_calibration()).unwrap();
    let mut s = Scenario::by_name("sphere").unwrap();
    let hold = s.keyframes.last().unwrap().clone();
    s.keyframes.extend(std::iter::repeat_n(hold, 400));
    Runner::with_frames(p, Frames::Scenario(s))
}

fn connect(server: &StreamServer) -> Client {
    let (ws, _) = tungstenite::connect(format!("ws://{}", server.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    }
    ws
}

fn next(ws: &mut Client) -> Value {
    let deadline = Instant::now() + Duration::from_secs(20);
    while Instant::now() < deadline {
        match ws.read() {
            Ok(Message::Text(t)) => {
                let v: Value = serde_json::from_str(t.as_str()).unwrap();
                assert_eq!(v["schema"], SCHEMA);
                assert_eq!(v["version"], VERSION);
                return v;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => panic!("{e}"),
        }
    }
    panic!("no message within 20 s");
}

fn next_of(ws: &mut Client, kind: &str) -> Value {
    loop {
        let v = next(ws);
        if v["type"] == kind {
            return v;
        }
    }
}

/// First state ticked at or after `frame`.
fn state_from(ws: &mut Client, frame: u64) -> Value {
    loop {
        let v = next_of(ws, "state");
        if v["frame"].as_u64().unwrap() >= frame {
            return v;
        }
    }
}

fn send(ws: &mut Client, v: Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

fn max_extension(state: &Value) -> f64 {
    state["targets"]["extension_mm"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e.as_f64().unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn console_session() {
    let mut r = runner(0.02);
    let server = StreamServer::bind("127.0.0.1:0", r.hello()).unwrap();
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let loop_ = scope.spawn(|| serve(&mut r, &server, None, &stop, None).unwrap());
        let mut ws = connect(&server);

        let hello = next(&mut ws);
        assert_eq!(hello["type"], "hello");
        assert_eq!(hello["scenario"], "sphere");
        assert!(hello["scenarios"].as_array().unwrap().contains(&json!("stimuli")));
        assert_eq!(hello["grid"]["gain"], 1.0);

        let base = state_from(&mut ws, 8);
        assert_eq!(base["degraded"], false);
        let before = max_extension(&base);
        assert!(before > 0.4, "{before}");

        send(&mut ws, json!({"id": 1, "type": "set_gain", "gain": 2.0}));
        let ack = next_of(&mut ws, "ack");
        assert_eq!(ack["id"], 1);
        assert_eq!(ack["control"], json!({"type": "set_gain", "gain": 2.0}));
        let after = state_from(&mut ws, ack["frame"].as_u64().unwrap());
        assert_eq!(after["grid"]["gain"], 2.0);
        let ratio = max_extension(&after) / before;
        assert!((ratio - 2.0).abs() < 0.02, "gain 2 gave ratio {ratio}");

        ws.send(Message::text("{not json")).unwrap();
        let err = next_of(&mut ws, "error");
        assert!(err["id"].is_null());
        send(&mut ws, json!({"id": 7, "type": "set_gain", "gain": 2.0, "extra": 1}));
        assert_eq!(next_of(&mut ws, "error")["id"], 7);
        send(&mut ws, json!({"id": 8, "type": "set_spacing", "px": 400.0}));
        let err = next_of(&mut ws, "error");
        assert_eq!(err["id"], 8);
        assert!(!err["message"].as_str().unwrap().is_empty());

        for (id, px) in [(10, 45.0), (11, 30.0), (12, 15.0)] {
            send(&mut ws, json!({"id": id, "type": "set_spacing", "px": px}));
            let ack = next_of(&mut ws, "ack");
            assert_eq!(ack["id"], id);
            let st = state_from(&mut ws, ack["frame"].as_u64().unwrap());
            assert_eq!(st["grid"]["spacing_px"], px);
            let pts = st["grid_points"].as_array().unwrap();
            let dx = pts[1][0].as_f64().unwrap() - pts[0][0].as_f64().unwrap();
            assert!((dx - px).abs() < 1e-9);
        }

        send(&mut ws, json!({"id": 20, "type": "pause"}));
        let ack = next_of(&mut ws, "ack");
        assert_eq!(ack["id"], 20);
        send(&mut ws, json!({"id": 21, "type": "step"}));
        next_of(&mut ws, "ack");
        let stepped = next_of(&mut ws, "state");
        assert_eq!(stepped["paused"], true);
        send(&mut ws, json!({"id": 22, "type": "select_scenario", "name": "rest"}));
        assert_eq!(next_of(&mut ws, "ack")["id"], 22);
        send(&mut ws, json!({"id": 23, "type": "resume"}));
        assert_eq!(next_of(&mut ws, "ack")["id"], 23);
        let rest = next_of(&mut ws, "state");
        assert_eq!(rest["scenario"], "rest");
        assert_eq!(rest["paused"], false);

        let _ = ws.close(None);
        stop.store(true, Ordering::Relaxed);
        loop_.join().unwrap();
    });
}

#[test]
fn ticks_do_not_depend_on_listeners() {
    let run = |with_client: bool| {
        let mut r = runner(0.0);
        let server = StreamServer::bind("127.0.0.1:0", r.hello()).unwrap();
        let mut ws = with_client.then(|| connect(&server));
        if ws.is_some() {
            while server.client_count() == 0 {
                std::thread::sleep(Duration::from_millis(1));
            }
        }
        let mut log = Vec::new();
        let stop = AtomicBool::new(false);
        let n = serve(&mut r, &server, Some(&mut log), &stop, Some(12)).unwrap();
        assert_eq!(n, 12);
        if let Some(ws) = ws.as_mut() {
            assert_eq!(next(ws)["type"], "hello");
        }
        log
    };
    let quiet = run(false);
    assert_eq!(String::from_utf8(quiet.clone()).unwrap().lines().count(), 12);
    assert_eq!(quiet, run(true));
}

#[test]
fn slow_client_does_not_stall_the_loop() {
    let mut r = runner(0.0);
    let server = StreamServer::bind("127.0.0.1:0", r.hello()).unwrap();
    // connected but never reads
    let _ws = connect(&server);
    while server.client_count() == 0 {
        std::thread::sleep(Duration::from_millis(1));
    }
    let stop = AtomicBool::new(false);
    let t = Instant::now();
    assert_eq!(serve(&mut r, &server, None, &stop, Some(40)).unwrap(), 40);
    assert!(t.elapsed() < Duration::from_secs(30));
}
