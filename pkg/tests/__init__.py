"""Init nest_asyncio."""
import nest_asyncio

nest_asyncio.apply()
