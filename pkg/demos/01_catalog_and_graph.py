"""Build a synthetic catalog, look around, split it, and form the graph.

Run: python3 demos/01_catalog_and_graph.py
"""

import converse_mcts as cm

spec = cm.SyntheticSpec(
    n_users=12, n_items=40, n_types=5, n_values_per_type=3,
    values_per_item=5, interactions_per_user=8, seed=4,
)
catalog = cm.generate_synthetic(spec)
print(f"catalog: {catalog.n_users} users, {catalog.n_items} items, "
      f"{catalog.n_types} types x {spec.n_values_per_type} values")

user = 3
items = sorted(catalog.interactions[user])
print(f"\nuser {user} interacted with items {[v - catalog.item_offset for v in items]}")
shared = sorted(catalog.shared_values(catalog.interactions[user]))
print("values shared by everything they touched:",
      [catalog.value_names[p - catalog.value_offset] for p in shared])

item = items[0]
print(f"\nitem {item - catalog.item_offset} carries:",
      [catalog.value_names[p - catalog.value_offset]
       for p in sorted(catalog.values_of_item(item))])

graph = cm.build_global_graph(catalog)
print(f"\ntripartite graph: {len(graph.user_item_edges)} user-item edges, "
      f"{len(graph.value_item_edges)} value-item edges")

train_c, valid_c, test_c = cm.split_interactions(catalog, seed=7)
count = lambda c: sum(len(s) for s in c.interactions)
print(f"split 7:1.5:1.5 -> train {count(train_c)}, valid {count(valid_c)}, "
      f"test {count(test_c)} interaction pairs")

# the file format round-trips
text_path = "/tmp/demo_catalog.tsv"
cm.save_catalog(catalog, text_path)
again = cm.load_catalog(text_path)
assert again.fingerprint() == catalog.fingerprint()
print(f"\nwrote and re-read {text_path}; fingerprints match: "
      f"{catalog.fingerprint()[:16]}...")
