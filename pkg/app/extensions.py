from flask_caching import Cache
from flask_cors import CORS

# Loaded banks and manifests are memoized here
cache = Cache()

# Inference endpoints are called from notebooks served on other origins
cors = CORS()
